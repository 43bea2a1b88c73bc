use thiserror::Error;

#[derive(Debug, Error)]
pub enum BevError {
    #[error("geometry error in {op}: {reason}")]
    Geometry { op: &'static str, reason: String },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] mvd_tensor::TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image encode error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, BevError>;
