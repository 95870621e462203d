use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid keypoints: {0}")]
    InvalidKeypoints(String),
    #[error("no visible keypoints")]
    NoVisibleKeypoints,
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },
    #[error("epoch {epoch} outside schedule range [0, {total}]")]
    EpochOutOfRange { epoch: u32, total: u32 },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: (usize, usize), actual: (usize, usize) },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: u32, detail: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("model format: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument { name, reason: reason.into() }
    }
}
