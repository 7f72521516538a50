use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// The frame count cannot accommodate the label sequence under CTC.
    #[error("alignment infeasible: {frames} frames cannot carry labels that need at least {required}")]
    AlignmentInfeasible { frames: usize, required: usize },

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("missing upstream artifact {}: {hint}", path.display())]
    Dependency { path: PathBuf, hint: String },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failures while reading or validating a checkpoint container.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint has {0} trailing bytes after the payload")]
    TrailingBytes(usize),

    #[error("malformed checkpoint manifest: {0}")]
    Manifest(String),

    #[error("checksum mismatch: checkpoint content was modified")]
    ChecksumMismatch,

    #[error("checkpoint holds a `{found}` model, expected `{expected}`")]
    ModelKind { expected: String, found: String },

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor `{0}` missing from checkpoint")]
    MissingTensor(String),

    #[error("unexpected tensor `{0}` in checkpoint")]
    UnexpectedTensor(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
