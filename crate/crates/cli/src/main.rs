mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use polfuse_core::Error;

use commands::Cli;

/// Exit status for a failed command.
pub enum Failure {
    Core(Error),
    /// At least one verification check reported violations.
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Core(Error::Data(_) | Error::State(_) | Error::Csv(_)) => 2,
            Failure::Core(_) => 1,
            Failure::Verification(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::Verification(msg) => eprintln!("verification failed: {msg}"),
            }
            ExitCode::from(f.code())
        }
    }
}
