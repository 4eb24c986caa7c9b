use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({left:?} vs {right:?})")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("cholesky: matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("cholesky: matrix is not symmetric (entry ({row}, {col}) differs by {diff:e})")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("{op}: need at least {needed} rows, got {got}")]
    TooFewRows {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("{0}: non-finite value produced")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("activations do not match the encoder: {0}")]
    StaleActivations(&'static str),

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("label out of range: {0}")]
    LabelOutOfRange(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to map errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Invalid(_) => ErrorClass::Usage,
            Error::BadMagic { .. }
            | Error::Truncated(_)
            | Error::LabelOutOfRange(_)
            | Error::Malformed(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::Shape { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::NotSymmetric { .. }
            | Error::TooFewRows { .. }
            | Error::NonFinite(_)
            | Error::StaleActivations(_) => ErrorClass::Numeric,
        }
    }
}
