//! Accuracy metrics, cross-validation harnesses, sliding-window map
//! prediction and the giant-tree potential map.

mod cv;
mod mapping;
mod metrics;

pub use cv::{
    geographic_cv, kfold_indices, kfold_random, split_samples_by_region, CvReport, FoldRun, GeoCvMode,
};
pub use mapping::{
    giant_tree_potential, interval_accuracy, paired_values, predict_map, read_interval_accuracy_csv,
    write_interval_accuracy_csv, IntervalAccuracy, DEFAULT_POTENTIAL_THRESHOLD, DEFAULT_TOLERANCE,
};
pub use metrics::{
    binned_mae, cdf_at, cumulative_height_distribution, macro_average, metrics, write_binned_csv, write_cdf_csv,
    write_metrics_csv, BinStat, MetricsReport, BIN_WIDTH,
};

use thiserror::Error;

use crate::geo::GeoError;
use crate::net::NetError;
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no values to evaluate")]
    Empty,
    #[error("prediction length {pred} does not match reference length {reference}")]
    LengthMismatch { pred: usize, reference: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid region setup: {0}")]
    Regions(String),
    #[error("train/test leakage: {0}")]
    Leakage(String),
    #[error("no interval accuracy for the {0} m bin")]
    MissingBin(i64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("channel mismatch: model expects {expected} bands, raster has {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
