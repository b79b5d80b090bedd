use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match tcanlab::run(tcanlab::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tcanlab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
