use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    EmptyInput { path: PathBuf, message: String },

    #[error("row {row}: {message}")]
    RowFormat { row: usize, message: String },

    #[error("document {id} has empty text")]
    EmptyText { id: String },

    #[error("cannot stratify: class {label:?} has {count} document(s), need at least 2")]
    Stratify { label: String, count: usize },

    #[error("format error at line {line}: {message}")]
    LineFormat { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("vocabulary build failed: {0}")]
    Build(String),

    #[error("document {} is empty after preprocessing", id.as_deref().unwrap_or("<unnamed>"))]
    EmptyDocument { id: Option<String> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training failed: {0}")]
    Train(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("operation requires fusion mode {expected}, model uses {found}")]
    Mode { expected: String, found: String },

    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite values or a diverging run.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::Tensor(TensorError::NonFinite { .. })
        )
    }
}
