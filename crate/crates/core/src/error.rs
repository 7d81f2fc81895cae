use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or command-line input.
    #[error("configuration error: {0}")]
    Config(String),

    /// Dataset directory does not follow the expected layout.
    #[error("dataset layout error: missing {path}")]
    Layout { path: PathBuf },

    /// Dataset contents cannot support the requested operation.
    #[error("data error: {0}")]
    Data(String),

    /// Tensor or image dimensions incompatible with the model.
    #[error("shape error: {0}")]
    Shape(String),

    /// Metric preconditions violated (single-class labels, length mismatch).
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// Checkpoint file is corrupt or from an unknown format version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss; includes the offending episode ids.
    #[error("non-finite loss at step {step}; episode queries: {queries:?}")]
    NonFinite { step: u64, queries: Vec<String> },

    /// Internal contract violation.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration/input problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Layout { .. }
            | Error::Data(_)
            | Error::Shape(_)
            | Error::Eval(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Checkpoint(_) => 2,
            Error::NonFinite { .. } | Error::Internal(_) => 1,
        }
    }
}
