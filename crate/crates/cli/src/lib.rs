//! Batch front end for wasslip: dataset generation, training, certification,
//! attacks and the oracle suite, each driven by one JSON config.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod report;
pub mod suite;

use std::fmt;
use std::path::PathBuf;

pub use commands::{run, Outcome};
pub use config::{load_config, parse_config, ExperimentConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    GenData,
    Train,
    Certify,
    Attack,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Certify => "certify",
            Command::Attack => "attack",
            Command::Verify => "verify",
        }
    }
}

/// One command-line invocation after argument parsing.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFICATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Errors that stop a command before it can report verdicts.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, config or input files.
    Usage(String),
    /// Non-finite values, infeasible programs, divergence.
    Numerical(String),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Failure::Numerical(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<wasslip_core::Error> for Failure {
    fn from(e: wasslip_core::Error) -> Self {
        use wasslip_core::Error as E;
        match e {
            E::NonFinite { .. }
            | E::Infeasible(_)
            | E::Unbounded(_)
            | E::Numerical(_)
            | E::Sampling(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

/// Exit code for a finished or failed run.
pub fn exit_code(result: &Result<Outcome, Failure>) -> u8 {
    match result {
        Ok(o) => o.exit_code,
        Err(f) => f.exit_code(),
    }
}
