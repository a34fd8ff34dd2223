use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("target row {row} is not one-hot")]
    NotOneHot { row: usize },

    #[error("parameter #{index} has no gradient; call zero_grad before backward")]
    MissingGrad { index: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Shape { op, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
