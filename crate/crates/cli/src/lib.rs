//! `maqt` command-line driver.
//!
//! Every subcommand reads an optional strict JSON config (or a manifest from
//! an earlier run), applies flag overrides, and writes its CSVs plus a
//! `manifest.json` into the output directory.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

pub use config::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "maqt", version, about = "Policy-tree MAC simulation and Age-of-Information analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Print the resolved config hash and output files.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    /// Suppress warnings and summaries.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation; writes batches.csv and events.csv.
    Simulate(Common),
    /// Compare protocols over many runs on a shared event stream.
    Compare(Common),
    /// Best and worst settled-tree mean AoI for each feasible (n, J).
    Bounds(BoundsArgs),
    /// Resettling-time distributions after one arrival or departure.
    Resettle(Common),
    /// Grid search over protocol parameters.
    Sweep(Common),
    /// Rebuild the ADRA parameter table by simulation.
    AdraOracle(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config, or a manifest.json from an earlier run.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "maqt-out")]
    pub out: PathBuf,
    #[arg(long, value_name = "N")]
    pub runs: Option<usize>,
    #[arg(long, value_name = "U64")]
    pub event_seed: Option<u64>,
    #[arg(long, value_name = "U64")]
    pub agent_seed: Option<u64>,
    #[arg(long, value_name = "NAME")]
    pub protocol: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n_min: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub j_min: Option<u32>,
    #[arg(long)]
    pub j_max: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verbosity {
    Quiet,
    Normal,
    Verbose,
}

impl Cli {
    pub fn verbosity(&self) -> Verbosity {
        match (self.quiet, self.verbose) {
            (true, _) => Verbosity::Quiet,
            (_, true) => Verbosity::Verbose,
            _ => Verbosity::Normal,
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let v = cli.verbosity();
    match &cli.command {
        Command::Simulate(c) => commands::simulate(c, v),
        Command::Compare(c) => commands::compare(c, v),
        Command::Bounds(b) => commands::bounds(b, v),
        Command::Resettle(c) => commands::resettle(c, v),
        Command::Sweep(c) => commands::sweep(c, v),
        Command::AdraOracle(c) => commands::adra_oracle(c, v),
    }
}
