//! Evaluation of generated motion: a recurrent action classifier whose
//! feature layer feeds FID, diversity and multimodality, plus recognition
//! accuracy and a foot-contact slide measure.

mod classifier;
mod diversity;
mod evaluate;
mod fid;

pub use classifier::{recognition_accuracy, train_classifier, ClassifierConfig, ClassifierReport, MotionClassifier};
pub use diversity::{diversity, multimodality, DIVERSITY_PAIRS, MULTIMODALITY_PAIRS};
pub use evaluate::{evaluate, foot_slide, DatasetSource, Estimate, EvalConfig, MetricsReport, MotionSource};
pub use fid::{fid, fid_from_stats, sqrtm_psd, FidValue, GaussianStats, FID_RIDGE};

use crate::autodiff::AutodiffError;
use crate::datasets::DatasetError;
use crate::tvae::TvaeError;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tvae(#[from] TvaeError),
    #[error("dataset has no clips")]
    EmptyDataset,
    #[error("feature pool is empty")]
    EmptyPool,
    #[error("action {0} has no samples")]
    MissingClass(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io: {0}")]
    Io(String),
}
