use std::path::PathBuf;

use semstereo_autograd::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    EmptyMask(&'static str),
    #[error("no supervised pixels")]
    NoSupervision,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {message}")]
    Raster { path: PathBuf, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step} (batch {batch:?})")]
    NonFiniteLoss { step: u64, batch: Vec<String> },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn raster(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Raster { path: path.into(), message: message.to_string() }
    }

    /// Whether the error stems from user input (configuration or usage)
    /// rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Precondition(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Precondition(msg()))
    }
}
