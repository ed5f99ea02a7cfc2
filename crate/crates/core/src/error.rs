//! Crate-wide error type and result alias.

use thiserror::Error;

/// Error categories surfaced by the library and mapped to CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor or sequence shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// NaN/Inf surfaced in a public result, or an input that would produce one.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Invalid argument to an operation (empty sequence, wrong channel count, ...).
    #[error("invalid input: {0}")]
    Input(String),
    /// Dataset content violates a contract (zero-variance channel, ...).
    #[error("data error: {0}")]
    Data(String),
    /// Malformed or mismatched file content.
    #[error("format error: {0}")]
    Format(String),
    /// Invalid configuration value or combination.
    #[error("configuration error: {0}")]
    Config(String),
    /// Training loop failure; message carries the epoch index.
    #[error("training error: {0}")]
    Training(String),
    /// Bad command line or config-file usage.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code: 2 usage, 3 data/format, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Numeric(_) | Error::Training(_) => 4,
            _ => 3,
        }
    }
}
