//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Declared modality boundaries or label counts do not match the data.
    #[error("schema error: {0}")]
    Schema(String),

    /// Data failed an integrity check (NaN features, labels outside {-1,+1}, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Training diverged or was otherwise aborted; carries enough context to
    /// reproduce the run.
    #[error("training aborted at epoch {epoch} (seed {seed}): {message}")]
    Training {
        message: String,
        seed: u64,
        epoch: usize,
    },
}

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
