use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {op} got {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid dimensions for {op}: {shape:?} ({reason})")]
    InvalidDims {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("contract violation in {op}: {reason}")]
    Contract { op: &'static str, reason: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("tensor io: {0}")]
    Io(#[from] std::io::Error),

    #[error("tensor file format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
