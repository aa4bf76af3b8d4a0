use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample count mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{cost} is undefined here: {reason}")]
    Domain { cost: &'static str, reason: String },

    #[error("{cost} gradient is singular at this point")]
    Singularity { cost: &'static str },

    #[error("structured maps need a cost of the form h(x - y); {0} has none")]
    StructuredCostUnavailable(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("brute-force enumeration limited to n <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },

    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training step {step} aborted: {detail}")]
    StepAborted { step: usize, detail: String },

    #[error("io error on {path}: {reason}")]
    Io { path: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
