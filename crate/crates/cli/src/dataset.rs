//! Tabular datasets read from CSV files with a header row.

use std::path::Path;

use recourse_drift_core::data::{Cohort, FeatureSchema, PopulationSource, SourceKind};
use recourse_drift_core::simulation::{DatasetSpec, SimulationConfig};
use recourse_drift_core::Error as CoreError;

use crate::error::{CliError, Result};

/// Reads the schema's feature columns, in schema order, and a binary label
/// column. Columns not named by the schema are ignored.
pub fn load_csv(path: &Path, schema: &FeatureSchema, label_column: &str) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::from(CoreError::Schema(format!("column `{name}` not found in {}", path.display())))
        })
    };
    let feature_cols = schema.names().iter().map(|n| column(n)).collect::<Result<Vec<_>>>()?;
    let label_col = column(label_column)?;

    let dim = schema.dim();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        for (&c, name) in feature_cols.iter().zip(schema.names()) {
            let cell = record.get(c).unwrap_or("");
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                CoreError::Data(format!("line {line}, column `{name}`: `{cell}` is not a finite number"))
            })?;
            features.push(v);
        }
        let cell = record.get(label_col).unwrap_or("");
        labels.push(parse_label(cell).ok_or_else(|| {
            CoreError::Data(format!("line {line}, column `{label_column}`: label `{cell}` is not binary"))
        })?);
    }
    if labels.is_empty() {
        return Err(CoreError::Data(format!("{} has no data rows", path.display())).into());
    }
    debug_assert_eq!(features.len(), labels.len() * dim);
    Ok(Cohort::labeled(dim, features, labels)?)
}

fn parse_label(cell: &str) -> Option<bool> {
    match cell {
        "1" | "1.0" | "true" => Some(true),
        "0" | "0.0" | "false" => Some(false),
        _ => None,
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CoreError::Data(format!("{}: malformed CSV: {other:?}", path.display())).into(),
    }
}

/// The population for `config.seed`, synthetic or read from disk.
pub fn population(config: &SimulationConfig) -> Result<PopulationSource> {
    match &config.dataset {
        spec @ DatasetSpec::Synthetic { .. } => {
            Ok(PopulationSource::synthetic(spec, config.test_fraction, config.seed)?)
        }
        spec @ DatasetSpec::Csv { path, label_column, .. } => {
            let schema = spec.csv_schema().expect("csv dataset")?;
            let pool = load_csv(Path::new(path), &schema, label_column)?;
            Ok(PopulationSource::from_pool(SourceKind::Csv, config.seed, schema, pool, config.test_fraction)?)
        }
    }
}
