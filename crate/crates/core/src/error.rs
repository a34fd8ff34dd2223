use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] biplanar_tensor::TensorError),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("phantom (seed {seed}): {msg}")]
    Phantom { seed: u64, msg: String },

    #[error("drr: {0}")]
    Drr(String),

    #[error("model: {0}")]
    Model(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },

    #[error("training: {0}")]
    Training(String),

    #[error("isosurface: {0}")]
    Isosurface(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
