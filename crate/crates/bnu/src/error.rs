//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A distribution or operation was called with parameters outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A caller violated a documented precondition (dimensions, simplex, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input data (CSV, config file, command line).
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Bad user input that is not tied to a specific file line.
    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code for the CLI: 1 for input-side errors, 2 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::InvalidParameter(_) | Error::Parse { .. } | Error::Input(_) => 1,
            Error::Contract(_) | Error::Io(_) => 2,
        }
    }
}
