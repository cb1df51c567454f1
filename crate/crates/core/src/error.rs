use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),

    #[error("index {index} is out of range ({reason})")]
    InvalidIndex { index: u64, reason: &'static str },

    #[error("step schedule is not non-increasing at n = {index}")]
    NonMonotone { index: u64 },

    #[error("path diverged at step {step_index}")]
    Divergence { step_index: u64, position: Vec<f64> },

    #[error("matrix is numerically singular")]
    Singular,

    #[error("ensembles have different sizes ({left} vs {right})")]
    UnequalSizes { left: usize, right: usize },

    #[error("dimension {dim} is not supported (at most {max})")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(&'static str),
}
