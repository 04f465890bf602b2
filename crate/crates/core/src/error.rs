use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("marginal weights must sum to 1 (got {sum})")]
    NotNormalized { sum: f64 },
    #[error("invalid marginal weights: {0}")]
    InvalidWeights(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("problem size {rows}x{cols} exceeds the exact solver limit of {limit}")]
    SizeExceeded { rows: usize, cols: usize, limit: usize },
    #[error("index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
