//! Action-conditioned temporal VAE with a learned prior, a GRU generator
//! and selectable pose decoders.

mod model;
mod sample;
mod train;

pub use model::{Action2MotionModel, ModelConfig, PoseDecoder};
pub use sample::GeneratedMotion;
pub use train::{train, ElboNoise, ElboVars, EpochStats, LossWeights, SequenceBatch, TrainConfig, TrainHistory};

use crate::autodiff::AutodiffError;
use crate::datasets::DatasetError;
use crate::lie::LieError;

#[derive(Debug, thiserror::Error)]
pub enum TvaeError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no training sequences")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("loss became non-finite at epoch {0}")]
    Diverged(usize),
}

#[cfg(test)]
mod tests;
