//! Command-line driver for the federated variational trainer: resolves an
//! experiment description from a flat key=value config file plus flag
//! overrides, runs it, and serializes per-round metrics as CSV.

use thiserror::Error;

pub mod config;
pub mod runner;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {msg}")]
    Config {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] pfedbayes::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
