use std::path::{Path, PathBuf};

use bloinst_core::data::DataError;
use bloinst_core::engine::TrainError;
use bloinst_core::models::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
    #[error("{0}")]
    Diverged(String),
    #[error(transparent)]
    Train(TrainError),
}

impl CliError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 usage, 3 I/O, 4 divergence, 5 compatibility, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Data(DataError::Version { .. }) => 5,
            CliError::Data(DataError::InvalidRequest(_)) => 2,
            CliError::Data(_) => 3,
            CliError::Incompatible(_) => 5,
            CliError::Diverged(_) => 4,
            CliError::Train(TrainError::Config(_) | TrainError::Model(ModelError::Config(_))) => 2,
            CliError::Train(TrainError::SplitTooSmall { .. }) => 2,
            CliError::Train(TrainError::Diverged { .. } | TrainError::NonFinite(_)) => 4,
            CliError::Train(_) => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Train(e)
    }
}
