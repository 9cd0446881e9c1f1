//! Error type shared across the crate.

use std::fmt;

/// Errors produced by kernel construction, evaluation and solving.
#[derive(Debug)]
pub enum Error {
    /// A time argument lies outside the horizon, or data does not cover it.
    Domain(String),
    /// A matrix factorization or linear solve failed (singularity, loss of
    /// positive definiteness, ill conditioning).
    Numerical(String),
    /// The requested operation is not available in the current kernel mode.
    UnsupportedMode(String),
    /// The caller violated an API contract (mismatched kernels, empty basis, ...).
    Usage(String),
    /// File I/O failure.
    Io(std::io::Error),
    /// Malformed input document.
    Parse(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
            Error::UnsupportedMode(msg) => write!(f, "unsupported mode: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
