use std::path::PathBuf;

use depthcast_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed {format} at byte offset {offset}: {msg}")]
    Format {
        path: PathBuf,
        format: &'static str,
        offset: usize,
        msg: String,
    },
    #[error("json error in {path}: {msg}")]
    Json { path: PathBuf, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("non-finite loss at step {step} in term `{term}` (max |grad| = {max_grad:e})")]
    NonFiniteLoss {
        step: u64,
        term: String,
        max_grad: f32,
    },
    #[error("metric error: {0}")]
    Metric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
