use std::path::PathBuf;

use kgalign_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown entity at line {line}: `{entity}`")]
    UnknownEntity { line: usize, entity: String },
    #[error("entity `{entity}` appears in more than one pair (line {line})")]
    DuplicateEntity { line: usize, entity: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot draw negatives: candidate pool of size {0}")]
    NegativePool(usize),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint was trained on different data: {0} intern table hash differs")]
    HashMismatch(String),
    #[error("truncated blob: tensor `{name}` needs bytes up to {needed}, file has {actual}")]
    TruncatedBlob { name: String, needed: u64, actual: u64 },
    #[error("checkpoint validation failed: {0}")]
    Validation(String),
    #[error("training diverged at epoch {epoch} (loss is NaN)")]
    Diverged {
        epoch: usize,
        last_good: Box<crate::checkpoint::Checkpoint>,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
