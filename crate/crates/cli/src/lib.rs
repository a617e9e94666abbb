//! Command-line driver for the extraction pipeline, usable in-process.
//!
//! Exit codes: 0 success, 1 lint findings at ERROR level, 2 bad input or
//! configuration, 3 provider failures (outputs are partial).

pub mod cli;
pub mod commands;
pub mod config;

pub use cli::Cli;

/// Runs one parsed command line and returns its exit code, reporting any
/// error on stderr.
pub fn run(cli: &Cli) -> u8 {
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            failure.code
        }
    }
}
