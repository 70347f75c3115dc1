//! Multi-seed, multi-method experiment execution.
//!
//! Layout of an output directory:
//!
//! ```text
//! out/manifest.json
//! out/aggregate.csv
//! out/status.csv
//! out/<method>/config.toml
//! out/<method>/seed-<s>/{metrics.csv, run.json, rounds/}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use recourse_drift_core::simulation::{run_simulation, PartialRun, RunArchive, SimulationConfig};

use crate::aggregate::{aggregate, aggregate_csv, AggregateRow};
use crate::archive::{write_atomic, write_run, MetricsTable, METRICS_FILE};
use crate::config::emit_config;
use crate::dataset::population;
use crate::error::{CliError, Result};
use crate::plot::{render_svg, seed_mean, Series};

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STATUS_FILE: &str = "status.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// A named configuration; every method runs on the same seeds.
#[derive(Debug, Clone)]
pub struct Method {
    pub name: String,
    pub config: SimulationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodEntry {
    pub name: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub methods: Vec<MethodEntry>,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub tool_version: String,
}

/// SHA-256 of the canonical JSON form of a configuration, in hex.
pub fn config_digest(config: &SimulationConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("configurations serialize");
    Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn seed_dir(out: &Path, method: &str, seed: u64) -> PathBuf {
    out.join(method).join(format!("seed-{seed}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedStatus {
    pub method: String,
    pub seed: u64,
    pub rounds_done: usize,
    pub solver_failures: usize,
    /// `None` on success.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub statuses: Vec<SeedStatus>,
    pub aggregate: Vec<AggregateRow>,
}

impl RunSummary {
    pub fn failed(&self) -> usize {
        self.statuses.iter().filter(|s| s.error.is_some()).count()
    }
}

pub fn status_table(statuses: &[SeedStatus]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "seed", "status", "rounds", "solver_failures", "error"]).expect("in-memory write");
    for s in statuses {
        w.write_record([
            s.method.as_str(),
            &s.seed.to_string(),
            if s.error.is_some() { "failed" } else { "ok" },
            &s.rounds_done.to_string(),
            &s.solver_failures.to_string(),
            s.error.as_deref().unwrap_or(""),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

fn run_seed(method: &Method, seed: u64, out: &Path) -> SeedStatus {
    let mut config = method.config.clone();
    config.seed = seed;
    let dir = seed_dir(out, &method.name, seed);
    let outcome = population(&config).map_err(|e| (e.to_string(), None)).and_then(|source| {
        run_simulation(config, source).map_err(|PartialRun { error, archive }| (error.to_string(), archive))
    });
    let (archive, mut error): (Option<RunArchive>, Option<String>) = match outcome {
        Ok(a) => (Some(a), None),
        Err((msg, partial)) => (partial.map(|b| *b), Some(msg)),
    };
    let (rounds_done, solver_failures) =
        archive.as_ref().map(|a| (a.rounds.len(), a.rounds.iter().map(|r| r.solver_failures).sum())).unwrap_or((0, 0));
    if let Some(a) = &archive {
        if let Err(e) = write_run(&dir, a) {
            error.get_or_insert_with(|| e.to_string());
        }
    }
    if solver_failures > 0 {
        eprintln!(
            "warning: {} seed {seed}: {solver_failures} recourse solver failures left users unmodified",
            method.name
        );
    }
    SeedStatus { method: method.name.clone(), seed, rounds_done, solver_failures, error }
}

/// Runs every method on every seed and writes archives, the aggregate
/// table, the status table and the manifest. An existing output directory
/// is refused unless `force` is set, in which case it is replaced.
pub fn run_experiment(methods: &[Method], seeds: &[u64], out: &Path, force: bool) -> Result<RunSummary> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(CliError::Usage("nothing to run: need at least one method and one seed".into()));
    }
    for (i, m) in methods.iter().enumerate() {
        if m.name.is_empty() || m.name.contains(['/', '\\']) || m.name.starts_with('.') {
            return Err(CliError::Usage(format!("invalid method name `{}`", m.name)));
        }
        if methods[..i].iter().any(|o| o.name == m.name) {
            return Err(CliError::Usage(format!("method `{}` is given twice", m.name)));
        }
        m.config.validate()?;
    }
    if out.exists() {
        if !force {
            return Err(CliError::Usage(format!("{} already exists; pass --force to replace it", out.display())));
        }
        fs::remove_dir_all(out).map_err(|e| CliError::io(out, e))?;
    }
    for m in methods {
        fs::create_dir_all(out.join(&m.name)).map_err(|e| CliError::io(out, e))?;
        write_atomic(&out.join(&m.name).join(CONFIG_FILE), emit_config(&m.config)?.as_bytes())?;
    }

    let jobs: Vec<(&Method, u64)> = methods.iter().flat_map(|m| seeds.iter().map(move |s| (m, *s))).collect();
    let statuses: Vec<SeedStatus> = jobs.par_iter().map(|(m, s)| run_seed(m, *s, out)).collect();

    let mut rows = Vec::new();
    for m in methods {
        let mut tables = Vec::new();
        for s in statuses.iter().filter(|s| s.method == m.name && s.error.is_none()) {
            tables.push(MetricsTable::read(&seed_dir(out, &m.name, s.seed).join(METRICS_FILE))?);
        }
        rows.push(aggregate(&m.name, &tables));
    }
    write_atomic(&out.join(AGGREGATE_FILE), aggregate_csv(&rows).as_bytes())?;
    write_atomic(&out.join(STATUS_FILE), status_table(&statuses).as_bytes())?;

    let manifest = RunManifest {
        methods: methods
            .iter()
            .map(|m| MethodEntry { name: m.name.clone(), config_digest: config_digest(&m.config) })
            .collect(),
        seeds: seeds.to_vec(),
        out_dir: out.to_string_lossy().into_owned(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&out.join(MANIFEST_FILE), &json)?;
    Ok(RunSummary { statuses, aggregate: rows })
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn name_of(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

/// Metrics tables grouped by method. Accepts an experiment directory, a
/// single method directory, or a single run directory.
pub fn collect_tables(dir: &Path) -> Result<Vec<(String, Vec<MetricsTable>)>> {
    if dir.join(METRICS_FILE).is_file() {
        return Ok(vec![(name_of(dir), vec![MetricsTable::read(&dir.join(METRICS_FILE))?])]);
    }
    let runs_in = |d: &Path| -> Result<Vec<MetricsTable>> {
        let mut seeds: Vec<(u64, PathBuf)> = sorted_subdirs(d)?
            .into_iter()
            .filter(|p| p.join(METRICS_FILE).is_file())
            .filter_map(|p| name_of(&p).strip_prefix("seed-").and_then(|s| s.parse().ok()).map(|s| (s, p)))
            .collect();
        seeds.sort();
        seeds.iter().map(|(_, p)| MetricsTable::read(&p.join(METRICS_FILE))).collect()
    };
    let own = runs_in(dir)?;
    if !own.is_empty() {
        return Ok(vec![(name_of(dir), own)]);
    }
    let mut groups = Vec::new();
    for sub in sorted_subdirs(dir)? {
        let tables = runs_in(&sub)?;
        if !tables.is_empty() {
            groups.push((name_of(&sub), tables));
        }
    }
    if groups.is_empty() {
        return Err(CliError::Usage(format!("{} contains no run archives", dir.display())));
    }
    Ok(groups)
}

/// SVG of `metric` against the round, one seed-mean line per method.
pub fn plot_archive(dir: &Path, metric: &str) -> Result<String> {
    let series = collect_tables(dir)?
        .iter()
        .map(|(name, tables)| seed_mean(name, tables, metric))
        .collect::<Result<Vec<Series>>>()?;
    render_svg(metric, &series)
}
