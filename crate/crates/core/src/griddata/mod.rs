//! Gridded meteorological samples: variable registry, standardization, crop
//! geometry, synthetic data and the VTXG file format.

mod crop;
pub mod format;
mod registry;
mod series;
pub mod synth;

use thiserror::Error;

pub use crop::{canonical_crops, random_crop, CropPlan, Region};
pub use format::{read_grid, write_grid, write_sidecar};
pub use registry::{VariableEntry, VariableRegistry, DEFAULT_TARGETS, PRESSURE_LEVELS};
pub use series::{fit_standardizer, GridSample, GridSeries, NormStats, Split, MIN_STD};
pub use synth::{equal_angle_latitudes, generate_synthetic, SynthConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("variable {0:?} is constant over the fitted samples")]
    ConstantChannel(String),
    #[error("need at least {needed} time steps, got {got}")]
    InsufficientSteps { needed: usize, got: usize },
    #[error("split {split} does not tile a {height}x{width} grid into patch-{patch}-aligned crops (both {height}/{split} and {width}/{split} must be whole multiples of {patch})")]
    IndivisibleGrid { height: usize, width: usize, split: usize, patch: usize },
    #[error("region {region:?} is out of bounds or misaligned for a {grid:?} grid with patch {patch}")]
    BadRegion { region: Region, grid: (usize, usize), patch: usize },
    #[error("bad magic bytes {found:?}, expected \"VTXG\"")]
    BadMagic { found: Vec<u8> },
    #[error("format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("corrupt header: {0}")]
    HeaderCorrupt(String),
    #[error("payload truncated: expected {expected} bytes, found {actual}")]
    PayloadTruncated { expected: usize, actual: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("series is empty")]
    EmptySeries,
    #[error("duplicate variable {0}")]
    DuplicateVariable(String),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad latitudes: {0}")]
    BadLatitudes(String),
    #[error("timestamps must increase with a constant step")]
    BadTimestamps,
    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },
    #[error("lead time {lead_hours}h is not a positive multiple of the {step_hours}h step")]
    BadLeadTime { lead_hours: i64, step_hours: i64 },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}
