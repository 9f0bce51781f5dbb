use thiserror::Error;

use crate::model::Variant;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CwmError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("operation requires variant {expected}, got {found}")]
    WrongVariant { expected: &'static str, found: Variant },

    #[error("degenerate fit: {0}")]
    Degenerate(String),
}

pub type Result<T, E = CwmError> = std::result::Result<T, E>;
