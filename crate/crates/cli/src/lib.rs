//! Configuration-driven front end for hybrid mechanical system runs:
//! simulate, classify guards, or verify the structural invariants, emitting
//! trajectory CSV and report JSON in stable formats.

use std::path::PathBuf;

pub mod config;
pub mod report;
pub mod runner;

pub use config::{parse_config, GuardSpec, Mode, RunConfig};
pub use runner::{execute, run_batch, ExecOutcome};

/// Front-end errors. Parse and validation errors carry the offending
/// location or key; everything else wraps the underlying cause.
#[derive(Debug)]
pub enum CliError {
    Parse { message: String },
    Validation { key: String, message: String },
    Io { path: PathBuf, message: String },
    Core(hbs_core::Error),
    Internal { message: String },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse { message } => write!(f, "config parse error: {message}"),
            CliError::Validation { key, message } => {
                write!(f, "invalid config at '{key}': {message}")
            }
            CliError::Io { path, message } => {
                write!(f, "io error on {}: {message}", path.display())
            }
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Internal { message } => write!(f, "internal error: {message}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<hbs_core::Error> for CliError {
    fn from(e: hbs_core::Error) -> Self {
        CliError::Core(e)
    }
}
