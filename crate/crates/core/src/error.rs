use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("length error in {context}: expected {expected} bytes, found {found}")]
    Length {
        context: String,
        expected: u64,
        found: u64,
    },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("checksum mismatch for {file}: manifest says {expected:08x}, file hashes to {actual:08x}")]
    Checksum {
        file: String,
        expected: u32,
        actual: u32,
    },

    #[error("curve fit failed: {0}")]
    Fit(String),

    #[error("non-finite {quantity} at epoch {epoch}, batch {batch}; state dumped to {dump:?}")]
    Diverged {
        quantity: String,
        epoch: usize,
        batch: usize,
        dump: Option<PathBuf>,
    },

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
