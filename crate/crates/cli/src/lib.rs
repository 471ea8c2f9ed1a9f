//! `exitperron` command-line front end.
//!
//! Exit codes: 0 pass, 1 usage or configuration error, 2 solver
//! non-convergence, 3 verification failure.

pub mod args;
pub mod catalog;
pub mod commands;
pub mod oracle;
pub mod output;
pub mod problem_file;

use std::ffi::OsString;
use std::path::Path;

use clap::Parser;
use thiserror::Error;

pub use args::Cli;
pub use problem_file::{parse_problem, ProblemFileError};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "EXITPERRON_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("problem file: {0}")]
    Problem(#[from] ProblemFileError),
    #[error(transparent)]
    Model(#[from] exitperron_core::model::ModelError),
    #[error(transparent)]
    Grid(#[from] exitperron_core::grid::GridError),
    #[error(transparent)]
    Sim(#[from] exitperron_core::sim::SimError),
    #[error(transparent)]
    Perron(#[from] exitperron_core::perron::PerronError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    NonConvergence,
    Fail,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::NonConvergence => 2,
            Outcome::Fail => 3,
        }
    }

    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer (got `{raw}`)")))?;
    // A pool may already exist when `run` is called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = configure_threads().and_then(|_| commands::dispatch(&cli));
    match result {
        Ok(outcome) => outcome.code(),
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
