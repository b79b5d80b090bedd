use std::io;
use std::path::PathBuf;

use tcan_core::augment::AugmentError;
use tcan_core::data_io::DataError;
use tcan_core::features::FeatureError;
use tcan_core::model::{CheckpointError, ModelError};
use tcan_core::tensor::TensorError;
use tcan_core::trainer::TrainError;
use thiserror::Error;

/// Process exit codes.
///
/// | code | meaning |
/// |------|---------|
/// | 0 | success |
/// | 1 | I/O failure reading or writing a file |
/// | 2 | invalid configuration or arguments |
/// | 3 | input data unusable: corpus, WAV, manifest or report |
/// | 4 | numerical failure during training or evaluation |
/// | 5 | gradient check above tolerance |
pub mod exit {
    pub const IO: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERIC: u8 = 4;
    pub const GRADCHECK: u8 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numeric(String),
    #[error("gradient check failed for: {}", .0.join(", "))]
    GradCheck(Vec<String>),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{failed} of {total} runs failed")]
    Partial { failed: usize, total: usize, code: u8 },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => exit::IO,
            CliError::Config(_) => exit::CONFIG,
            CliError::Data(_) => exit::DATA,
            CliError::Numeric(_) => exit::NUMERIC,
            CliError::GradCheck(_) => exit::GRADCHECK,
            CliError::Partial { code, .. } => *code,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { path, source } => CliError::Io { path, source },
            DataError::InvalidArgument(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::InvalidArgument(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::FeatureWidth { .. } => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(source) => CliError::Io { path: PathBuf::new(), source },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidArgument(m) => CliError::Config(m),
            TrainError::Distortion { .. } | TrainError::Features { .. } | TrainError::Report(_) => {
                CliError::Data(e.to_string())
            }
            TrainError::Model(m) => m.into(),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<tcan_core::Error> for CliError {
    fn from(e: tcan_core::Error) -> Self {
        use tcan_core::Error as E;
        match e {
            E::Tensor(e) => e.into(),
            E::Audio(e) => CliError::Data(e.to_string()),
            E::Augment(e) => e.into(),
            E::Features(e) => e.into(),
            E::Model(e) => e.into(),
            E::Checkpoint(e) => e.into(),
            E::Train(e) => e.into(),
            E::Data(e) => e.into(),
        }
    }
}
