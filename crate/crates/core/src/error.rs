use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("truncation failure: {0}")]
    TruncationFailure(String),

    #[error("{function} failed to converge for a={a}, x={x}")]
    Convergence { function: &'static str, a: f64, x: f64 },

    #[error("log-gamma argument out of range: {0}")]
    Overflow(String),

    #[error("decision rule used outside its validity regime: {0}")]
    RegimeViolation(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Short machine-readable code, used in the `status` column of sweep output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::TruncationFailure(_) => "truncation_failure",
            Error::Convergence { .. } => "convergence_failure",
            Error::Overflow(_) => "overflow",
            Error::RegimeViolation(_) => "regime_violation",
            Error::Quadrature(_) => "quadrature_failure",
            Error::Config(_) => "config_error",
            Error::Io { .. } => "io_error",
            Error::Csv { .. } => "csv_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
