//! Strict TOML configuration files.
//!
//! Every key is optional and falls back to its default; unknown keys,
//! type mismatches and out-of-range values are rejected with the key path
//! in the message.

use std::fs;
use std::path::{Path, PathBuf};

use recourse_drift_core::simulation::{DatasetSpec, SimulationConfig};
use recourse_drift_core::Error as CoreError;

use crate::error::{CliError, Result};

/// Parses and validates a configuration file. A relative CSV dataset path
/// is resolved against the directory holding the file and made absolute.
pub fn parse_config(path: &Path) -> Result<SimulationConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut config = parse_config_str(&text).map_err(|message| CliError::Config { path: path.into(), message })?;
    if let DatasetSpec::Csv { path: csv, .. } = &mut config.dataset {
        let p = PathBuf::from(&*csv);
        if p.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            let joined = base.join(p);
            *csv = std::path::absolute(&joined).unwrap_or(joined).to_string_lossy().into_owned();
        }
    }
    Ok(config)
}

/// Parses and validates configuration text; the error names the offending key.
pub fn parse_config_str(text: &str) -> std::result::Result<SimulationConfig, String> {
    let de = toml::Deserializer::parse(text).map_err(|e| e.to_string())?;
    let config: SimulationConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().message().trim().to_string();
        if path == "." || path.is_empty() {
            inner
        } else {
            format!("at `{path}`: {inner}")
        }
    })?;
    config.validate().map_err(|e| match e {
        CoreError::Config { key, reason } => format!("at `{key}`: {reason}"),
        other => other.to_string(),
    })?;
    Ok(config)
}

/// The fully defaulted configuration as TOML.
pub fn emit_config(config: &SimulationConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| CliError::Runtime(format!("cannot serialize configuration: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use recourse_drift_core::labeling::Policy;

    #[test]
    fn minimal_config_is_defaulted() {
        let c = parse_config_str("[dataset]\nkind = \"synthetic\"\n[labeling]\npolicy = \"fair_top_k\"\n").unwrap();
        let mut expected = SimulationConfig::default();
        expected.labeling.policy = Policy::FairTopK;
        assert_eq!(c, expected);
        assert_eq!(parse_config_str("").unwrap(), SimulationConfig::default());
    }

    #[test]
    fn k_fraction_out_of_range() {
        let err = parse_config_str("k_fraction = 1.5").unwrap_err();
        assert!(err.contains("k_fraction"), "{err}");
    }

    #[test]
    fn unknown_keys_are_fatal() {
        let err = parse_config_str("[update]\ntua = 0.1\n").unwrap_err();
        assert!(err.contains("update") && err.contains("tua"), "{err}");
        let err = parse_config_str("[model]\nepochs = \"many\"\n").unwrap_err();
        assert!(err.contains("model.epochs"), "{err}");
    }

    #[test]
    fn emitted_config_round_trips() {
        let mut c = SimulationConfig::default();
        c.labeling.policy = Policy::FairTopK;
        c.model.learning_rate = Some(0.03);
        let text = emit_config(&c).unwrap();
        assert_eq!(parse_config_str(&text).unwrap(), c);
        let defaults = emit_config(&SimulationConfig::default()).unwrap();
        assert_eq!(parse_config_str(&defaults).unwrap(), SimulationConfig::default());
    }
}
