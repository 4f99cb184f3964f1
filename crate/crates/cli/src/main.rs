use std::process::ExitCode;

use clap::Parser;
use ui_rkd_cli::args::Cli;
use ui_rkd_cli::commands::Status;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match ui_rkd_cli::run(&cli) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::CellFailures) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
