//! Error type shared by the library.

use thiserror::Error;

/// Errors produced by dataset IO, validation, and numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data or configuration violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A structured text file could not be parsed.
    #[error("{file}:{line}: {message}")]
    Format {
        file: String,
        line: usize,
        message: String,
    },

    /// A numerical routine could not produce a usable result.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn format(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            line,
            message: msg.into(),
        }
    }

    /// True when the error indicates bad input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::Format { .. })
    }
}
