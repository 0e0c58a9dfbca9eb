//! Optimization: AdamW with warmup and cosine decay, gradient accumulation,
//! global and regional (cropped) training, resumable checkpoints and cost
//! accounting.

mod cost;
mod optim;
mod plan;
mod schedule;
mod trainer;

use thiserror::Error;

use crate::griddata::{GridError, Region};
use crate::metrics::MetricsError;
use crate::model::ModelError;

pub use cost::{split_cost, CostLedger, SplitCost};
pub use optim::{adamw_step, AdamWConfig, OptimState};
pub use plan::{CropMode, TrainPlan};
pub use schedule::lr_at;
pub use trainer::{global_train_epoch, regional_train_epoch, EpochStats, Example, Progress, StepRecord, Trainer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid train plan: {field}: {reason}")]
    InvalidPlan { field: &'static str, reason: String },
    #[error("non-finite loss {loss} at step {step} (sample t={t}, region {region:?})")]
    NonFiniteLoss { step: u64, t: usize, region: Region, loss: f64 },
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint plan differs in field {field}: checkpoint has {found}, expected {expected}")]
    ConfigMismatch { field: String, expected: String, found: String },
    #[error("no training pairs: {0}")]
    NoTrainingPairs(String),
    #[error("corrupt training state: {0}")]
    Corrupt(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
