//! Command-line driver for the latent-space ensemble-filter workbench.
//!
//! Subcommands: `train-clima` trains and stores the offline climatology
//! autoencoders, `run` executes the configured experiment (single point
//! or sweep; `sweep` is an alias), `summarize` merges run directories
//! into one plot-ready table, and `diagnose` checks the first-order
//! prediction of the latent analysis against a large ensemble.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors, 2 when
//! some repetitions failed but the run was completed and recorded.

mod config;
mod driver;

use clap::{Parser, Subcommand};
use config::ExperimentSpec;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "latent-etkf",
    version,
    about = "Twin-experiment workbench for ensemble filters in autoencoder latent spaces"
)]
struct Cli {
    /// Experiment description (TOML file).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Overrides the seed from the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: the file's `out`, else `runs-<experiment>`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for repetition-level parallelism (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trains the offline climatology autoencoders and stores them under
    /// `<out>/vae/`, skipping ones already present.
    TrainClima,
    /// Runs the configured experiment end to end: climatologies, every
    /// configuration over the grid, metrics with bootstrap intervals,
    /// and manifests.
    #[command(alias = "sweep")]
    Run,
    /// Merges the metrics of one or more run directories into a single
    /// summary table on stdout (and `<out>/summary.txt` when `--out` is
    /// given).
    Summarize {
        /// Run directories, each holding a `manifest.json`.
        #[arg(required = true, value_name = "DIR")]
        dirs: Vec<PathBuf>,
    },
    /// Compares the closed-form prediction of the latent analysis
    /// moments against a large encoded ensemble and writes
    /// `<out>/diagnose.txt`.
    Diagnose,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match &cli.command {
        Command::TrainClima => {
            let (spec, out_dir) = load_spec(&cli)?;
            driver::ensure_climatologies(&spec, &out_dir)?;
            eprintln!(
                "{} climatology autoencoders ready under {}",
                spec.n_climatologies,
                out_dir.join("vae").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run => {
            let (spec, out_dir) = load_spec(&cli)?;
            let status = driver::run_experiment(&spec, &out_dir)?;
            if status == driver::RunStatus::Partial {
                eprintln!(
                    "warning: some repetitions failed; see {}",
                    out_dir.join("manifest.json").display()
                );
            }
            eprintln!("results written to {}", out_dir.display());
            Ok(ExitCode::from(status.exit_code()))
        }
        Command::Summarize { dirs } => {
            let out_file = cli.out.as_ref().map(|dir| dir.join("summary.txt"));
            if let Some(parent) = out_file.as_ref().and_then(|p| p.parent()) {
                std::fs::create_dir_all(parent)?;
            }
            let text = driver::summarize(dirs, out_file.as_deref())?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Diagnose => {
            let (spec, out_dir) = load_spec(&cli)?;
            let text = driver::diagnose(&spec, &out_dir)?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Parses the experiment file and resolves the seed and output
/// directory, with command-line flags taking precedence.
fn load_spec(cli: &Cli) -> Result<(ExperimentSpec, PathBuf), Box<dyn std::error::Error>> {
    let path = cli
        .config
        .as_deref()
        .ok_or("missing --config <FILE>; this command needs an experiment description")?;
    let mut spec = config::parse_config(path)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| spec.out.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs-{}", spec.experiment)));
    Ok((spec, out_dir))
}
