//! Desk-scale experiments: datasets, an MLP with a pluggable normalization
//! layer, SGD training and parallel grid sweeps with long-format CSV output.

pub mod config;
pub mod data;
pub mod mlp;
pub mod sweep;
pub mod train;

pub use config::{DataSpec, ExperimentSpec, GridSpec, ModelSpec, RunConfig, TrainSpec};
pub use data::{gaussian_blobs, gen_gaussian_features, load_idx, make_random_labels, Dataset};
pub use mlp::Mlp;
pub use sweep::{best_over_learning_rates, curve_rows, feasibility_warnings, sweep, write_sweep_csv, BestRow, SweepRow};
pub use train::{train, train_run, EpochStats, RunStatus, TrainCurve};

use crate::norm::NormError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Csv(e.to_string())
    }
}
