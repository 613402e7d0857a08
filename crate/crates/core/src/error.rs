use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor operation received incompatible shapes. Names the op and the
    /// offending dimension.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument violated an operation's precondition.
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// Backward was invoked twice on the same graph without a reset.
    #[error("backward already run on this graph; build a fresh graph or call reset_grads")]
    BackwardAlreadyRun,

    /// Audio input did not satisfy the model's requirements.
    #[error("audio error: {0}")]
    Audio(String),

    #[error("wav error for {path}: {detail}")]
    Wav { path: PathBuf, detail: String },

    #[error("io error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed or incompatible checkpoint container.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Configuration rejected during validation; names the offending key.
    #[error("config error: {0}")]
    Config(String),

    /// Training aborted (e.g. non-finite loss). Carries the diagnostic.
    #[error("training aborted: {0}")]
    Training(String),

    /// Dataset or label problem detected before training started.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Analysis input violated a precondition (rank deficiency, non-finite values).
    #[error("analysis error: {0}")]
    Analysis(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }
}
