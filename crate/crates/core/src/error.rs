//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to map failures onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed configuration or argument combination.
    Config,
    /// Input data is inconsistent, out of domain or unreadable.
    Data,
    /// A numerical procedure failed (singular system, no convergence).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value {value} outside domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rank-deficient design; aliased columns {aliased:?}")]
    RankDeficient { aliased: Vec<usize> },

    #[error("singular system: {what} (condition number {condition:.3e})")]
    Singular { what: String, condition: f64 },

    #[error("weak instrument: {0}")]
    WeakInstrument(String),

    #[error("did not converge after {iterations} iterations: {what}")]
    NoConvergence { what: String, iterations: usize },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error: {msg}")]
    Parse { path: String, msg: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::InvalidInput(_)
            | Error::Shape(_)
            | Error::Domain { .. }
            | Error::Io { .. }
            | Error::Parse { .. }
            | Error::Json(_) => ErrorKind::Data,
            Error::RankDeficient { .. }
            | Error::Singular { .. }
            | Error::WeakInstrument(_)
            | Error::NoConvergence { .. }
            | Error::Numeric(_) => ErrorKind::Numeric,
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
