use std::fmt;
use std::process::ExitCode;

use artzoom::augment::AugmentError;
use artzoom::dataset::DatasetError;
use artzoom::metrics::MetricsError;
use artzoom::nn::NnError;
use artzoom::raster::RasterError;
use artzoom::train::TrainError;

pub const OK: u8 = 0;
pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;
pub const INTERNAL: u8 = 4;

/// A failed command: the process exit code plus the error chain to print.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self { code: USAGE, error: anyhow::anyhow!("{msg}") }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self { code: DATA, error: anyhow::anyhow!("{msg}") }
    }

    pub fn context(mut self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        self.error = self.error.context(ctx);
        self
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn raster_code(_: &RasterError) -> u8 {
    DATA
}

fn dataset_code(e: &DatasetError) -> u8 {
    match e {
        DatasetError::InvalidFoldCount(_) | DatasetError::TooFewSamples { .. } => USAGE,
        _ => DATA,
    }
}

fn nn_code(e: &NnError) -> u8 {
    match e {
        NnError::UnknownArchitecture { .. } | NnError::InvalidSpec(_) => USAGE,
        NnError::WeightFormat { .. }
        | NnError::MissingTensor(_)
        | NnError::UnexpectedTensor(_)
        | NnError::WeightShape { .. }
        | NnError::Io { .. } => DATA,
        NnError::ShapeMismatch(_) | NnError::IndivisibleChannels { .. } | NnError::HeadNotFound => INTERNAL,
    }
}

fn metrics_code(e: &MetricsError) -> u8 {
    match e {
        MetricsError::UnpairedReports(_)
        | MetricsError::InvalidReport(_)
        | MetricsError::ZeroBaseline
        | MetricsError::Io { .. }
        | MetricsError::Csv(_)
        | MetricsError::Json(_) => DATA,
        _ => INTERNAL,
    }
}

fn train_code(e: &TrainError) -> u8 {
    match e {
        TrainError::Config(_) => USAGE,
        TrainError::TargetOutOfRange { .. } | TrainError::Io { .. } | TrainError::Image { .. } => DATA,
        TrainError::Nn(e) => nn_code(e),
        TrainError::Dataset(e) => dataset_code(e),
        TrainError::Metrics(e) => metrics_code(e),
        TrainError::Fold { source, .. } => train_code(source),
    }
}

fn augment_code(e: &AugmentError) -> u8 {
    match e {
        AugmentError::InvalidConfig(_) => USAGE,
        AugmentError::Image { source, .. } | AugmentError::Raster(source) => raster_code(source),
        AugmentError::Dataset(e) => dataset_code(e),
    }
}

macro_rules! classified {
    ($ty:ty, $f:ident) => {
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Self { code: $f(&e), error: e.into() }
            }
        }
    };
}

classified!(DatasetError, dataset_code);
classified!(NnError, nn_code);
classified!(MetricsError, metrics_code);
classified!(TrainError, train_code);
classified!(AugmentError, augment_code);

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: DATA, error: e.into() }
    }
}
