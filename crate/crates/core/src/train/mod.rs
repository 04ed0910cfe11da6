//! Loss, optimiser and the cross-validation training loop.

mod cv;
mod data;
mod loss;
mod optim;

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::metrics::MetricsError;
use crate::nn::NnError;
use crate::raster::RasterError;

pub use cv::{
    evaluate, run_cross_validation, run_cross_validation_with, train_fold, CvOptions, CvOutcome, FoldOutcome,
};
pub use data::{normalize_imagenet, DiskSource, InMemorySource, SampleSource, IMAGENET_MEAN, IMAGENET_STD};
pub use loss::cross_entropy;
pub use optim::{adamw_step, OptimizerState, TrainConfig, DEFAULT_TRAIN_SEED};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: RasterError },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<TrainError> },
}
