//! Temporal convolutional attention network for classifying synthetic
//! audio distortions, with the tensor engine, augmentation, feature
//! extraction and training loop it needs.

pub mod audio;
pub mod augment;
pub mod data_io;
pub mod features;
pub mod gradcheck;
pub mod model;
pub mod seed;
pub mod tensor;
pub mod trainer;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Audio(#[from] audio::AudioError),
    #[error(transparent)]
    Augment(#[from] augment::AugmentError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] model::CheckpointError),
    #[error(transparent)]
    Train(#[from] trainer::TrainError),
    #[error(transparent)]
    Data(#[from] data_io::DataError),
}

pub type Result<T> = std::result::Result<T, Error>;
