use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("not found: {0}")]
    Lookup(String),

    #[error("training diverged in {component} at step {step}: loss is not finite")]
    Divergence { component: String, step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed for request {request}: {source}")]
    Stage {
        stage: String,
        request: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint holds module `{found}`, expected `{expected}`")]
    ModuleMismatch { expected: String, found: String },

    #[error("field `{field}` mismatch: checkpoint has {found}, model expects {expected}")]
    FieldMismatch { field: String, expected: String, found: String },

    #[error("array `{name}` missing from checkpoint")]
    MissingArray { name: String },

    #[error("array `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

/// Wraps an I/O failure with the path it concerns.
pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
