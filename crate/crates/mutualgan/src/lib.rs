//! File formats, dataset IO, the training loop driver, evaluation and the
//! command line for `mutualgan-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod pnm;
pub mod train;

use thiserror::Error;

pub use mutualgan_core as core;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Data(#[from] dataset::DataError),
    #[error(transparent)]
    Image(#[from] pnm::ImageFileError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Core(#[from] mutualgan_core::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Bad input from the caller, as opposed to a failure while running.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) | Error::Usage(_) => true,
            Error::Data(dataset::DataError::Usage(_)) => true,
            Error::Core(e) => matches!(e, mutualgan_core::Error::Config(_) | mutualgan_core::Error::Usage(_)),
            _ => false,
        }
    }
}
