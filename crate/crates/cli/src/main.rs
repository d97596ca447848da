//! `mvreins`: equilibrium reinsurance contracts from a TOML configuration.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical
//! non-certification, 1 I/O failure.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Context, Overrides, SimulateArgs};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mvreins", version, about = "Time-consistent mean-variance reinsurance under heterogeneous beliefs")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Monte Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of time-grid nodes.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Cross-check against the discretized oracle with this many cells.
    #[arg(long = "with-oracle", global = true, value_name = "N")]
    with_oracle: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve on the time grid; write the solution, value functions and a certification report.
    Solve,
    /// Slope-regime partition at each time node.
    Partition,
    /// Discretized brute-force solution at `time.at`.
    Oracle,
    /// Monte Carlo estimate of the mean-variance objective.
    Simulate(SimArgs),
    /// `M(t)` and `m(t)` on the time grid.
    Value,
    /// Full, homogeneous and unconstrained contracts at `time.at`.
    Compare,
    /// Contract parameters and `H*` at each time node.
    Sweep,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    x0: Option<f64>,
    /// `equilibrium`, a solver method name, or a solution JSON file.
    #[arg(long)]
    strategy: Option<String>,
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let config = cli.config.as_deref().ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let overrides = Overrides { seed: cli.seed, grid: cli.grid, with_oracle: cli.with_oracle };
    let ctx = Context::new(config, &cli.out, overrides)?;
    match &cli.command {
        Command::Solve => commands::run_solve(&ctx),
        Command::Partition => commands::run_partition(&ctx),
        Command::Oracle => commands::run_oracle(&ctx),
        Command::Simulate(a) => {
            let args = SimulateArgs { paths: a.paths, t0: a.t0, x0: a.x0, strategy: a.strategy.clone() };
            commands::run_simulate(&ctx, &args)
        }
        Command::Value => commands::run_value(&ctx),
        Command::Compare => commands::run_compare(&ctx),
        Command::Sweep => commands::run_sweep(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mvreins: {e}");
            e.exit_code()
        }
    }
}
