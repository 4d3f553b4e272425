//! Error types shared across the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not symmetric (max relative asymmetry {0:e})")]
    AsymmetricMatrix(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("model covariance is not positive definite")]
    SigmaNotPd,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed hierarchy: {0}")]
    MalformedTree(String),

    #[error("line search failed after {backtracks} backtracking steps at iteration {iteration}")]
    LineSearchFailed { iteration: usize, backtracks: usize },

    #[error("none of the {starts} random starts converged")]
    AllStartsFailed { starts: usize },

    #[error("loading matrix has entries above tolerance outside the declared structure (item {item}, column {column})")]
    StructureMismatch { item: usize, column: usize },

    #[error("non-numeric cell at row {row}, column {column}: {value:?}")]
    NonNumericCell {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("sample size N is required for covariance input")]
    MissingN,

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable name used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::AsymmetricMatrix(_) => "AsymmetricMatrix",
            Error::NotPositiveDefinite => "NotPositiveDefinite",
            Error::SigmaNotPd => "SigmaNotPD",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::MalformedTree(_) => "MalformedTree",
            Error::LineSearchFailed { .. } => "LineSearchFailed",
            Error::AllStartsFailed { .. } => "AllStartsFailed",
            Error::StructureMismatch { .. } => "StructureMismatch",
            Error::NonNumericCell { .. } => "NonNumericCell",
            Error::MissingN => "MissingN",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
