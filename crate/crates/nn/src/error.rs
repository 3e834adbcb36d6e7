use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (kernel norms: {layer_norms:?})"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        layer_norms: Vec<f64>,
    },

    #[error("tensor file: {0}")]
    Format(String),

    #[error("checksum mismatch for {0}")]
    Checksum(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
