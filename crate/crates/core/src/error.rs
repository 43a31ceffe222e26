use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the geometry kernel, grid containers and the verification harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operation requires a 2D square, got dimension {0}")]
    NotPlanar(usize),

    #[error("box is not a square")]
    NotSquare,

    #[error("value is not a dyadic rational: {0}")]
    NotDyadic(String),

    #[error("objects live on different grid domains")]
    DomainMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("box lies (partly) outside the grid extent")]
    OutsideExtent,

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
