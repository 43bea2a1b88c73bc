use thiserror::Error;

/// Errors raised by model construction, evaluation, and persistence.
#[derive(Debug, Error)]
pub enum ModelError {
    /// A configuration value violates its documented range or consistency
    /// rule.
    #[error("config error: {0}")]
    Config(String),

    /// A tensor argument has the wrong shape for the operation.
    #[error("dimension error in {op}: {reason}")]
    Dim { op: &'static str, reason: String },

    /// A caller broke an API contract (wrong mode, missing condition,
    /// inconsistent checkpoint).
    #[error("contract violation in {op}: {reason}")]
    Contract { op: &'static str, reason: String },

    /// An attribute value is not in the vocabulary.
    #[error("unknown {axis} value {value:?}; valid values are {valid:?}")]
    Vocab {
        axis: &'static str,
        value: String,
        valid: &'static [&'static str],
    },

    /// A request exceeds a hard resource budget.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Diffusion(#[from] mvd_diffusion::DiffusionError),

    #[error(transparent)]
    Tensor(#[from] mvd_tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
