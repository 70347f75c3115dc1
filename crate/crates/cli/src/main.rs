use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use recourse_drift::config::{emit_config, parse_config};
use recourse_drift::runner::{plot_archive, run_experiment, status_table, Method};
use recourse_drift::theory_report::theory_report;
use recourse_drift::{CliError, Result};
use recourse_drift_core::simulation::SimulationConfig;

fn defaults_help() -> String {
    let text = emit_config(&SimulationConfig::default()).unwrap_or_default();
    format!("Configuration defaults (every key is optional):\n\n{text}")
}

#[derive(Parser)]
#[command(
    name = "recourse-drift",
    version,
    about = "Simulate recourse-driven model drift under a top-k resource constraint"
)]
#[command(after_long_help = defaults_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more configurations over a set of seeds.
    Run {
        /// TOML configuration; repeat to compare methods. Each file's stem names its method.
        #[arg(long = "config", value_name = "FILE")]
        configs: Vec<PathBuf>,
        /// A seed count N (seeds s..s+N from the first configuration's `seed`) or a comma-separated list.
        #[arg(long, default_value = "5")]
        seeds: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long, env = "RECOURSE_DRIFT_WORKERS")]
        workers: Option<usize>,
    },
    /// Plot one metric against the round as SVG, one line per method.
    Plot {
        /// Experiment, method or run directory.
        archive: PathBuf,
        #[arg(long)]
        metric: String,
        /// Output file; defaults to `<archive>/<metric>.svg`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical checks of the theory module and print a report.
    VerifyTheory {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Instances per perturbation harness.
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the effective configuration, all defaults filled in.
    PrintConfig {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
}

fn parse_seeds(spec: &str, base: u64) -> Result<Vec<u64>> {
    let bad = || CliError::Usage(format!("--seeds expects a count or a comma-separated list, got `{spec}`"));
    if spec.contains(',') {
        return spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect();
    }
    let n: u64 = spec.trim().parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok((0..n).map(|i| base.wrapping_add(i)).collect())
}

fn method_of(path: &Path) -> Result<Method> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::Usage(format!("{} has no file name", path.display())))?;
    Ok(Method { name, config: parse_config(path)? })
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { configs, seeds, out, force, workers } => {
            let methods = if configs.is_empty() {
                vec![Method { name: "default".into(), config: SimulationConfig::default() }]
            } else {
                configs.iter().map(|p| method_of(p)).collect::<Result<Vec<_>>>()?
            };
            let seeds = parse_seeds(&seeds, methods[0].config.seed)?;
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(w) = workers {
                if w == 0 {
                    return Err(CliError::Usage("worker count must be positive".into()));
                }
                pool = pool.num_threads(w);
            }
            let pool = pool.build().map_err(|e| CliError::Runtime(e.to_string()))?;
            let summary = pool.install(|| run_experiment(&methods, &seeds, &out, force))?;
            if summary.failed() > 0 {
                eprint!("{}", status_table(&summary.statuses));
                eprintln!(
                    "{} of {} runs failed; partial archives are in {}",
                    summary.failed(),
                    summary.statuses.len(),
                    out.display()
                );
                return Ok(1);
            }
            println!("{} runs written to {}", summary.statuses.len(), out.display());
            Ok(0)
        }
        Command::Plot { archive, metric, out } => {
            let svg = plot_archive(&archive, &metric)?;
            let path = out.unwrap_or_else(|| archive.join(format!("{metric}.svg")));
            recourse_drift::archive::write_atomic(&path, svg.as_bytes())?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::VerifyTheory { samples, seeds, seed } => {
            print!("{}", theory_report(samples, seeds, seed)?);
            Ok(0)
        }
        Command::PrintConfig { config } => {
            let c = match config {
                Some(p) => parse_config(&p)?,
                None => SimulationConfig::default(),
            };
            print!("{}", emit_config(&c)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
