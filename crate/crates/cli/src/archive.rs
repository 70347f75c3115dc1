//! On-disk run archives: the metrics table plus every round's cohort,
//! labels and model checkpoint, enough to recompute the metrics.
//!
//! A run directory holds `metrics.csv`, `run.json` (configuration, schema,
//! test set and bootstrap model) and `rounds/round-NNNN.json`. Files are
//! written to a temporary name and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use recourse_drift_core::data::{Cohort, FeatureSchema, FrozenCohort};
use recourse_drift_core::metrics::RoundRecord;
use recourse_drift_core::models::{param_count, ModelKind, ScoreModel};
use recourse_drift_core::simulation::{RoundArchive, RunArchive, SimulationConfig};
use recourse_drift_core::Error as CoreError;

use crate::error::{CliError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_FILE: &str = "run.json";
pub const ROUNDS_DIR: &str = "rounds";

/// Column order of `metrics.csv`.
pub const METRIC_COLUMNS: [&str; 14] = [
    "round",
    "stba",
    "stba_degenerate",
    "higher_standard",
    "tar",
    "tar_guarded",
    "ftr",
    "avg_recourse_cost",
    "jsd",
    "tau_eff",
    "accepted",
    "saturated",
    "recoursed",
    "train_size",
];

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// The metrics table as CSV. Absent values are empty cells; floats use the
/// shortest representation that reads back to the same value.
pub fn metrics_csv(records: &[RoundRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRIC_COLUMNS).expect("in-memory write");
    for r in records {
        w.write_record([
            r.round.to_string(),
            opt(r.stba),
            r.stba_degenerate.to_string(),
            r.higher_standard.to_string(),
            r.tar.to_string(),
            r.tar_guarded.to_string(),
            opt(r.ftr),
            opt(r.avg_recourse_cost),
            r.jsd.to_string(),
            r.tau_eff.to_string(),
            r.accepted.to_string(),
            r.saturated.to_string(),
            r.recoursed.to_string(),
            r.train_size.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// A metrics file read back as numbers; booleans become 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl MetricsTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| table_error(path, e))?;
        let columns: Vec<String> =
            reader.headers().map_err(|e| table_error(path, e))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| table_error(path, e))?;
            let row = record
                .iter()
                .map(|cell| match cell {
                    "" => Ok(None),
                    "true" => Ok(Some(1.0)),
                    "false" => Ok(Some(0.0)),
                    _ => cell
                        .parse()
                        .map(Some)
                        .map_err(|_| CliError::Runtime(format!("{}: `{cell}` is not a number", path.display()))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(MetricsTable { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r.get(c).copied().flatten()).collect())
    }
}

fn table_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Runtime(format!("{}: malformed metrics table: {other:?}", path.display())),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    kind: ModelKind,
    dim: usize,
    hidden_width: usize,
    params: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    fn of(model: &ScoreModel) -> Self {
        Checkpoint {
            kind: model.kind(),
            dim: model.dim(),
            hidden_width: model.hidden_width(),
            params: model.named_params().into_iter().map(|(n, v)| (n.to_string(), v.to_vec())).collect(),
        }
    }

    fn model(&self) -> Result<ScoreModel> {
        let n = param_count(self.kind, self.dim, self.hidden_width);
        let template = ScoreModel::from_parts(self.kind, self.dim, self.hidden_width, vec![0.0; n])?;
        let mut params = Vec::with_capacity(template.params().len());
        for (name, block) in template.named_params() {
            let values = self
                .params
                .get(name)
                .ok_or_else(|| CoreError::Data(format!("checkpoint is missing parameter block `{name}`")))?;
            if values.len() != block.len() {
                return Err(CoreError::Data(format!("parameter block `{name}` has the wrong length")).into());
            }
            params.extend_from_slice(values);
        }
        Ok(ScoreModel::from_parts(self.kind, self.dim, self.hidden_width, params)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CohortFile {
    dim: usize,
    rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<f64>>,
    recoursed: Vec<bool>,
}

impl CohortFile {
    fn of(c: &Cohort) -> Self {
        CohortFile {
            dim: c.dim(),
            rows: c.rows().map(<[f64]>::to_vec).collect(),
            labels: c.labels().map(<[bool]>::to_vec),
            scores: c.scores().map(<[f64]>::to_vec),
            recoursed: c.recoursed().to_vec(),
        }
    }

    fn cohort(self, round: usize) -> Result<Cohort> {
        if self.rows.iter().any(|r| r.len() != self.dim) {
            return Err(CoreError::Data("archived cohort row has the wrong length".into()).into());
        }
        let mut c = Cohort::new(self.dim, self.rows.concat())?.with_state(self.labels, self.scores, self.recoursed)?;
        c.round = round;
        Ok(c)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaFile {
    names: Vec<String>,
    actionable: Vec<bool>,
    cost_weights: Vec<f64>,
    cost_offset: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunFile {
    config: SimulationConfig,
    schema: SchemaFile,
    test_set: CohortFile,
    bootstrap_model: Checkpoint,
    bootstrap_jsd: f64,
    rounds: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RoundFile {
    round: usize,
    cohort: CohortFile,
    train_mask: Vec<bool>,
    recourse_costs: Vec<f64>,
    solver_failures: usize,
    tau_eff: f64,
    model: Checkpoint,
}

fn round_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(ROUNDS_DIR).join(format!("round-{t:04}.json"))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("archive types serialize")
}

/// Writes a (possibly partial) run into `dir`, creating it if needed.
pub fn write_run(dir: &Path, archive: &RunArchive) -> Result<()> {
    fs::create_dir_all(dir.join(ROUNDS_DIR)).map_err(|e| CliError::io(dir, e))?;
    for r in &archive.rounds {
        let file = RoundFile {
            round: r.round,
            cohort: CohortFile::of(&r.cohort),
            train_mask: r.train_mask.clone(),
            recourse_costs: r.recourse_costs.clone(),
            solver_failures: r.solver_failures,
            tau_eff: r.tau_eff,
            model: Checkpoint::of(&r.model),
        };
        write_atomic(&round_path(dir, r.round), &to_json(&file))?;
    }
    let s = &archive.schema;
    let run = RunFile {
        config: archive.config.clone(),
        schema: SchemaFile {
            names: s.names().to_vec(),
            actionable: s.actionable().to_vec(),
            cost_weights: s.cost_weights().to_vec(),
            cost_offset: s.cost_offset(),
        },
        test_set: CohortFile::of(&archive.test_set),
        bootstrap_model: Checkpoint::of(&archive.bootstrap_model),
        bootstrap_jsd: archive.bootstrap_jsd,
        rounds: archive.rounds.len(),
    };
    write_atomic(&dir.join(RUN_FILE), &to_json(&run))?;
    write_atomic(&dir.join(METRICS_FILE), metrics_csv(&archive.records).as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Loads a run archive. Its `records` are left empty; use
/// [`RunArchive::replay_records`] to recompute them.
pub fn load_run(dir: &Path) -> Result<RunArchive> {
    let run: RunFile = read_json(&dir.join(RUN_FILE))?;
    let schema =
        FeatureSchema::new(run.schema.names, run.schema.actionable, run.schema.cost_weights, run.schema.cost_offset)?;
    let mut rounds = Vec::with_capacity(run.rounds);
    for t in 1..=run.rounds {
        let f: RoundFile = read_json(&round_path(dir, t))?;
        if f.round != t {
            return Err(CoreError::Data(format!("round file {t} claims to be round {}", f.round)).into());
        }
        rounds.push(RoundArchive {
            round: t,
            cohort: f.cohort.cohort(t)?,
            train_mask: f.train_mask,
            recourse_costs: f.recourse_costs,
            solver_failures: f.solver_failures,
            tau_eff: f.tau_eff,
            model: f.model.model()?,
        });
    }
    Ok(RunArchive {
        config: run.config,
        schema,
        test_set: FrozenCohort::new(run.test_set.cohort(0)?),
        bootstrap_model: run.bootstrap_model.model()?,
        bootstrap_jsd: run.bootstrap_jsd,
        rounds,
        records: Vec::new(),
    })
}

/// Recomputes the metrics of an archived run and renders them as CSV.
pub fn replay_csv(dir: &Path) -> Result<String> {
    Ok(metrics_csv(&load_run(dir)?.replay_records()?))
}
