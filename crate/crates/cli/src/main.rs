use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use tfi_cli::commands::{
    cmd_forward, cmd_invert, cmd_metrics, cmd_place, cmd_sweep, ExperimentPlan, InvertArgs, PlaceArgs, RunInputs,
};
use tfi_core::evaluation::METRICS_HEADER;
use tfi_core::inversion::TrainConfig;
use tfi_core::sampling::PoolCounts;

#[derive(Parser)]
#[command(name = "tfi", version, about = "Temperature field inversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Layout file (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Grid nodes per side.
    #[arg(long, short = 'k', default_value_t = 50)]
    k: usize,
}

#[derive(Subcommand)]
enum Command {
    /// FD truth field with the true intensities.
    Forward {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Rank candidate sensor sets by condition number.
    Place {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 42)]
        n_obs: usize,
        #[arg(long, default_value_t = 50)]
        lhs: usize,
        #[arg(long, default_value_t = 50)]
        lds: usize,
        #[arg(long, default_value_t = 50)]
        gs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Reconstruct the field from noisy sensor readings.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Sensor positions CSV (`x_m,y_m`).
        #[arg(long)]
        sensors: PathBuf,
        /// Relative noise level.
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training config (TOML); defaults otherwise.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Checkpoint to start from instead of pretraining.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        run_id: String,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run every cell of an experiment plan.
    Sweep {
        plan: PathBuf,
    },
    /// Error metrics between two field files.
    Metrics {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "run")]
        run_id: String,
    },
}

fn load_train(path: Option<&PathBuf>) -> Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Forward { common, out } => {
            cmd_forward(&common.spec, common.k, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Place {
            common,
            n_obs,
            lhs,
            lds,
            gs,
            seed,
            lambda,
            out,
        } => {
            let args = PlaceArgs {
                spec: common.spec,
                k: common.k,
                n_obs,
                pool: PoolCounts { lhs, lds, gs },
                seed,
                lambda,
                out,
            };
            let (best, ranking) = cmd_place(&args)?;
            println!(
                "candidate {} ({}) kappa {:e} of {} candidates",
                ranking[0].candidate_id,
                best.positions.provenance.name(),
                best.kappa,
                ranking.len()
            );
        }
        Command::Invert {
            common,
            sensors,
            eps,
            seed,
            train,
            pretrained,
            run_id,
            out,
        } => {
            let args = InvertArgs {
                spec: common.spec,
                sensors,
                run: RunInputs {
                    k: common.k,
                    eps,
                    seed,
                    train: load_train(train.as_ref())?,
                },
                pretrained,
                out,
                run_id: run_id.clone(),
            };
            let report = cmd_invert(&args)?;
            println!("{METRICS_HEADER}\n{}", report.csv_row(&run_id));
        }
        Command::Sweep { plan } => {
            let plan = ExperimentPlan::load(&plan)?;
            let outcome = cmd_sweep(&plan)?;
            for c in &outcome.cells {
                match &c.result {
                    Ok(r) => println!("{}{}", r.csv_row(&c.cell.id()), if c.skipped { " (cached)" } else { "" }),
                    Err(e) => eprintln!("{}: failed: {e:#}", c.cell.id()),
                }
            }
            println!("{} cells, {} ran, {} failed", outcome.cells.len(), outcome.ran(), outcome.failures());
            return Ok(outcome.failures() == 0);
        }
        Command::Metrics {
            spec,
            pred,
            truth,
            run_id,
        } => {
            let report = cmd_metrics(&pred, &truth, &spec)?;
            println!("{METRICS_HEADER}\n{}", report.csv_row(&run_id));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
