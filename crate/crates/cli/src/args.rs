use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::grid::{BandwidthChoice, KinkChoice, MethodChoice, RegimeChoice};

#[derive(Debug, Parser)]
#[command(name = "ui-rkd", version, about = "Simulate unemployment spells, estimate kink regressions and calibrate the welfare test")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for simulated randomness; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a spell dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Run the estimation grid on a dataset and write fits as JSON.
    Estimate(EstimateArgs),
    /// Compute the welfare test from fits or from given statistics.
    Calibrate(CalibrateArgs),
    /// Write binned means, the density check and covariate smoothness tests.
    Diagnose(DiagnoseArgs),
    /// Render fits and welfare results as CSV tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of spells; overrides the configuration.
    #[arg(long)]
    pub n: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kink: Option<KinkChoice>,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeChoice>,
    /// fg, mse or a width in reference-wage units.
    #[arg(long)]
    pub bandwidth: Option<BandwidthChoice>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub poly: Option<u8>,
    /// Add demographic controls and region, industry and year fixed effects.
    #[arg(long)]
    pub controls: bool,
    #[arg(long, value_enum)]
    pub method: Option<MethodChoice>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Fits from `estimate`; log-wage and total-UI cells are paired by label.
    #[arg(long, conflicts_with_all = ["eta", "dr_db", "r_over_b"])]
    pub fits: Option<PathBuf>,
    /// Elasticity of reemployment wages with respect to the benefit.
    #[arg(long, requires_all = ["dr_db", "r_over_b"])]
    pub eta: Option<f64>,
    #[arg(long)]
    pub dr_db: Option<f64>,
    #[arg(long)]
    pub r_over_b: Option<f64>,
    /// Monthly separation rate; overrides the configuration.
    #[arg(long)]
    pub delta: Option<f64>,
    /// JSON output; a CSV table is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub bin_width: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub fits: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
