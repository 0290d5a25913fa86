//! Command-line runner: loads a scenario (file or preset), runs the
//! requested pipeline and writes CSV/SVG/binary artifacts plus a manifest.
//!
//! Exit codes: 0 on success, 2 on validation failures, 3 on solver
//! precondition failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod figures;

use abatement::Error;

#[derive(Parser)]
#[command(
    name = "abatement",
    version,
    about = "Carbon-tax abatement investment: HJB/Isaacs solvers, Monte Carlo policy evaluation, tables and figures"
)]
pub struct Cli {
    /// Scenario configuration file (JSON).
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,

    /// Built-in scenario preset name.
    #[arg(long, global = true)]
    pub preset: Option<String>,

    /// Output directory (defaults to the config's directory, then
    /// $ABATEMENT_OUT, then ./out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Override the simulation seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Override the Monte Carlo path count.
    #[arg(long, global = true)]
    pub paths: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Solve the scenario's control problem and write the grid artifacts.
    Solve,
    /// Solve and simulate the feedback policy; write ensemble and
    /// statistics CSVs.
    Simulate {
        /// Retain full trajectories for the first N paths in the ensemble CSV.
        #[arg(long, default_value_t = 10)]
        retain: usize,
        /// Keep every N-th step in the ensemble CSV.
        #[arg(long, default_value_t = 1)]
        thin: usize,
    },
    /// Solve the tax-uncertainty game and export the saddle field.
    Game,
    /// Reproduce a quantile table (rows: kappa or rebate variants).
    Table {
        #[arg(value_enum)]
        table_id: TableId,
    },
    /// Reproduce a figure (SVG plus a CSV sidecar with every series).
    Figure { figure_id: String },
    /// Compute the matched deterministic benchmark constants.
    Benchmark,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum TableId {
    Emissions,
    Investment,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err.downcast_ref::<Error>() {
                Some(Error::Validation { .. }) => ExitCode::from(2),
                Some(Error::Precondition(_)) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
