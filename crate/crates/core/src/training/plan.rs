use serde::{Deserialize, Serialize};

use super::{AdamWConfig, TrainError};
use crate::exec::Execution;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    /// Every canonical crop of every sample, each once per epoch.
    #[default]
    Canonical,
    /// One uniformly drawn patch-aligned crop per sample per epoch.
    Random,
}

/// Optimization schedule and data regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Examples per micro-batch.
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub accumulation_steps: usize,
    /// Split factor `S`: crops are `(H/S) x (W/S)`.
    pub split: usize,
    #[serde(default)]
    pub crop_mode: CropMode,
    pub lead_time_hours: i64,
    pub seed: u64,
    pub lr_peak: f64,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(default)]
    pub execution: Execution,
}

impl TrainPlan {
    /// Examples consumed by one optimizer step.
    pub fn examples_per_step(&self) -> usize {
        self.batch_size * self.accumulation_steps
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field: &'static str, reason: String| Err(TrainError::InvalidPlan { field, reason });
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if self.warmup_epochs >= self.epochs {
            return bad("warmup_epochs", format!("{} must be below epochs {}", self.warmup_epochs, self.epochs));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.accumulation_steps == 0 {
            return bad("accumulation_steps", "must be at least 1".into());
        }
        if self.split == 0 {
            return bad("split", "must be at least 1".into());
        }
        if self.lead_time_hours <= 0 {
            return bad("lead_time_hours", "must be positive".into());
        }
        if !(self.lr_peak.is_finite() && self.lr_peak >= 0.0) {
            return bad("lr_peak", format!("{} is not a finite non-negative rate", self.lr_peak));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("optimizer", "betas must lie in [0, 1)".into());
        }
        if o.eps.is_nan() || o.eps <= 0.0 || o.weight_decay.is_nan() || o.weight_decay < 0.0 {
            return bad("optimizer", "eps must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }
}
