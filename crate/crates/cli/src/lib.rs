//! Command-line front end: configuration, estimation grids and the
//! `simulate`, `estimate`, `calibrate`, `diagnose` and `report` commands.

pub mod args;
pub mod commands;
pub mod config;
pub mod grid;
pub mod output;

use args::{Cli, Command};
use commands::{RunContext, Status};
use config::RunConfig;

/// Runs one invocation. `Ok(Status::CellFailures)` means outputs were
/// written but some cells failed.
pub fn run(cli: &Cli) -> anyhow::Result<Status> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if cli.jobs == Some(0) {
        anyhow::bail!("--jobs must be at least 1");
    }
    let ctx = RunContext::new(config, cli.jobs)?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Estimate(a) => commands::estimate(&ctx, a),
        Command::Calibrate(a) => commands::calibrate(&ctx, a),
        Command::Diagnose(a) => commands::diagnose(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
    }
}
