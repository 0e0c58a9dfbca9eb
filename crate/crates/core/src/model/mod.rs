//! The forecasting network: per-variable patch tokens, R-way split embedding,
//! query-based variable aggregation per stream, alternating spatial and mixing
//! encoder blocks, and a per-token prediction head.

mod census;
pub mod checkpoint;
mod config;
mod forward;
mod layout;

use thiserror::Error;

use crate::griddata::GridError;
use crate::numerics::NumericsError;

pub use census::{census_of_config, census_of_specs, count_parameters, ParameterCensus};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use forward::{
    aggregate_variables, embed_variables, encoder_forward, mixing_block, patchify, prediction_head, spatial_block,
    split_streams, unpatchify, unpatchify_indices, AggregationParams, BlockParams, Bound, EmbeddingParams, Forward,
    HeadParams, Model,
};
pub use layout::{block_specs, param_specs, InitOptions, WEIGHT_STD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("expected {expected} variables, got {got}")]
    VariableCountMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint config differs in field {field}: checkpoint has {found}, expected {expected}")]
    ConfigMismatch { field: String, expected: String, found: String },
    #[error("checkpoint parameter mismatch: {0}")]
    ParameterMismatch(String),
    #[error("not a checkpoint: bad magic bytes {0:?}")]
    BadMagic(Vec<u8>),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Grid(#[from] GridError),
}
