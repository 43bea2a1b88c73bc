use thiserror::Error;

/// Errors surfaced by schedules, samplers, and the latent codec.
#[derive(Debug, Error)]
pub enum DiffusionError {
    /// A construction parameter is outside its documented range.
    #[error("config error: {0}")]
    Config(String),

    /// A tensor argument has the wrong shape for the operation.
    #[error("dimension error in {op}: {reason}")]
    Dim { op: &'static str, reason: String },

    /// A caller or a model broke an API contract (bad step index, wrong
    /// prediction shape).
    #[error("contract violation in {op}: {reason}")]
    Contract { op: &'static str, reason: String },

    #[error(transparent)]
    Tensor(#[from] mvd_tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;
