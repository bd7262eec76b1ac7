//! Experiment runner: data generation, corruption, training sweeps,
//! evaluation, and diagnostic export, all driven by one TOML config.
//!
//! Exit codes: 0 on success, 2 for configuration problems (including
//! unknown config keys and bad flags), 3 for runtime failures.

use clap::{Parser, Subcommand};
use sigma_lab::config::ExperimentConfig;
use sigma_lab::sweep::{
    cmd_analyze, cmd_corrupt, cmd_eval, cmd_gen, cmd_sweep, cmd_train, SweepOptions,
};
use sigma_lab::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sigma-lab",
    version,
    about = "Label-noise experiment runner with learnable per-class sigma weighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output root, overriding the config's run.output_dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for independent sweep cells.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    jobs: usize,
    /// Offset added to every configured seed.
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    seed_offset: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Write the resolved data splits as CSV.
    Gen,
    /// Write corrupted training targets and change reports per grid cell.
    Corrupt,
    /// Train every (kind, ratio, loss, seed) cell; resumable.
    Train,
    /// Evaluate trained cells on the clean test split and summarize.
    Eval,
    /// Full pipeline per cell plus the summary table; resumable.
    Sweep,
    /// Export trajectory, density, surface, and geometry CSVs.
    Analyze,
}

fn run(cli: Cli) -> sigma_lab::Result<()> {
    let Some(config_path) = cli.config else {
        return Err(Error::Config(
            "--config <PATH> is required for every subcommand".to_string(),
        ));
    };
    let config = ExperimentConfig::load(config_path)?;
    let options = SweepOptions {
        out: cli.out,
        jobs: cli.jobs,
        seed_offset: cli.seed_offset,
    };
    match cli.command {
        Command::Gen => cmd_gen(&config, &options),
        Command::Corrupt => cmd_corrupt(&config, &options),
        Command::Train => cmd_train(&config, &options),
        Command::Eval => cmd_eval(&config, &options),
        Command::Sweep => cmd_sweep(&config, &options),
        Command::Analyze => cmd_analyze(&config, &options),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
