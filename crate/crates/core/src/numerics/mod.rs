//! Minimal reverse-mode differentiable numerics: exactly the operations the
//! forecaster needs, each with a hand-written backward pass.

pub mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

use thiserror::Error;

pub use graph::{gelu_scalar, Gradients, Graph, Mode, NodeId, Role};
pub use layers::{gelu_mlp, multi_head_self_attention, AttentionParams, MlpParams};
pub use params::{Init, ParamSpec, ParameterStore};
pub use tensor::Tensor;

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite input to {op}")]
    NonFiniteInput { op: &'static str },
    #[error("width {dim} is not divisible by {heads} heads")]
    HeadDivisibility { dim: usize, heads: usize },
    #[error("drop rate {0} outside [0, 1)")]
    RateOutOfRange(f64),
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
}
