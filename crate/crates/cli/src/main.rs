//! `manifold-flow`: static fit tests and surface evolutions from the command line.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 numerical failure,
//! 4 extinction-guard stop (outputs are still written).

mod commands;
mod options;

use std::process::ExitCode;

use clap::Parser;
use manifold_flow::Error;

use commands::Outcome;
use options::{Cli, Command, UsageError};

const THREADS_VAR: &str = "MANIFOLD_FLOW_THREADS";

fn configure_threads() -> Result<(), UsageError> {
    let Ok(v) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| UsageError(e.to_string()))
}

fn run(cli: &Cli) -> ExitCode {
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let settings = match options::resolve(&cli.command) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::FitTest(_) => commands::fit_test(&settings),
        cmd => commands::evolve(cmd.name(), &settings),
    };
    match result {
        Ok(Outcome::Completed) => ExitCode::SUCCESS,
        Ok(Outcome::NumericFailure) => ExitCode::from(3),
        Ok(Outcome::Extinct) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io(_) | Error::Json(_) => 1,
                Error::Config(_) | Error::MissingField => 2,
                _ => 3,
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    run(&cli)
}
