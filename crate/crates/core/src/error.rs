use thiserror::Error;

/// Broad failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {index} at ({x}, {y}) lies outside the grid")]
    PointOutsideGrid { index: usize, x: f64, y: f64 },

    #[error("matrix is not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("non-finite log posterior at {0}")]
    NonFinite(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::PointOutsideGrid { .. } | Error::Data(_) | Error::DimensionMismatch(_) => {
                ErrorCategory::Data
            }
            Error::NotPositiveDefinite { .. } | Error::Numeric(_) | Error::NonFinite(_) => {
                ErrorCategory::Numeric
            }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
