use std::process::ExitCode;

use adp_cli::args::Cli;
use adp_cli::Outcome;
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match adp_cli::run(&cli) {
        Ok(Outcome::Passed) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
