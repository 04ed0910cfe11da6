//! Artificial-zoom augmentation and a compact CNN toolkit for bacterial
//! microscopy classification experiments.
//!
//! The crate is organised around the experiment pipeline:
//!
//! * [`raster`]: image decode/encode, square crops and Lanczos resampling.
//! * [`augment`]: multi-scale crop augmentation of a class-per-directory tree.
//! * [`dataset`]: sample manifests, class inventories and k-fold splitting.
//! * [`nn`]: tensors, layer graphs (forward + backward), the twelve efficient
//!   architectures, head surgery, parameter accounting and weight files.
//! * [`train`]: cross-entropy, AdamW and the cross-validation training loop.
//! * [`metrics`]: top-k / weighted P-R-F1 scoring, fold averaging,
//!   relative improvement and table rendering.

pub mod augment;
pub mod dataset;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod rng;
pub mod train;

pub use augment::{
    augment_dataset, augment_image, plan_crops, AugmentError, AugmentationConfig,
    AugmentedSampleRecord, CropSpec,
};
pub use dataset::{
    class_distribution, fold_views, kfold_split, DatasetError, DatasetManifest, FoldAssignment,
    Sample,
};
pub use metrics::{
    relative_improvement, render_report, top_k_accuracy, weighted_prf, FoldScores, MetricReport,
    MetricsError, PredictionSet, ReportInput,
};
pub use nn::{
    build_architecture, compound_scale, finetune_head, param_count, predict, Architecture,
    ArchitectureSpec, CompoundScale, Float, LayerGraph, NnError, Tensor,
};
pub use raster::{crop, decode_image, encode_png, lanczos_resize, CropRect, RasterError, RasterImage};
pub use train::{
    adamw_step, cross_entropy, run_cross_validation, train_fold, OptimizerState, TrainConfig,
    TrainError,
};
