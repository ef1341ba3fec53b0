use std::process::ExitCode;

use clap::Parser;
use maqt_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("maqt: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
