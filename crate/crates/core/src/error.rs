//! Error type shared across the crate.

use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Unusable configuration, hyperparameter, or input location.
    #[error("config error: {0}")]
    Config(String),
    /// Data that parsed but violates a schema or invariant.
    #[error("validation error: {0}")]
    Validation(String),
    /// A file that does not match its expected on-disk format.
    #[error("format error: {0}")]
    Format(String),
    /// An artifact that no longer matches the model or vocabulary it was built with.
    #[error("stale artifact: {0}")]
    Stale(String),
    /// Non-finite values in numeric computation.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A training run that failed to make progress.
    #[error("training error at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn stale(msg: impl Into<String>) -> Self {
        Error::Stale(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn training(epoch: usize, msg: impl Into<String>) -> Self {
        Error::Training {
            epoch,
            msg: msg.into(),
        }
    }
}

/// Read a file, reporting a missing path as a config error so callers can
/// distinguish "bad path given" from "bad content found".
pub(crate) fn read_file_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub(crate) fn read_file_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

pub(crate) fn write_file_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::Config(format!("file not found: {}", path.display()))
    } else {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
    }
}
