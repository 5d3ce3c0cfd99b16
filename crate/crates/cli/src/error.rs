use std::io;
use std::path::{Path, PathBuf};

use adc_core::dataset::DataError;
use adc_core::synthetic::SyntheticError;
use adc_core::trainer::{ConfigError, TrainError};
use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Tamper(String),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Train(TrainError::Config(_)) => EXIT_USAGE,
            CliError::Train(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Synthetic(SyntheticError::Invalid(_)) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
