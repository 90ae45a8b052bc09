use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SerError>;

#[derive(Debug, Error)]
pub enum SerError {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("value {value} outside range {range}")]
    Range { value: f64, range: &'static str },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing auxiliary labels for ids: {0:?}")]
    MissingAuxLabels(Vec<String>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SerError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SerError::Io {
            path: path.into(),
            source,
        }
    }
}
