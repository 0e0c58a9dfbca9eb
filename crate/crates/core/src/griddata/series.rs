use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use super::{GridError, VariableRegistry};

/// One time step: `[V, H, W]` field values.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSample {
    pub data: Array3<f32>,
    /// Hours since 1970-01-01T00:00Z.
    pub timestamp: i64,
}

/// Per-variable affine standardization in source physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Channel std below this is treated as constant.
pub const MIN_STD: f64 = 1e-12;

impl NormStats {
    pub fn identity(variables: usize) -> Self {
        Self { mean: vec![0.0; variables], std: vec![1.0; variables] }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn standardize_value(&self, var: usize, x: f64) -> f64 {
        (x - self.mean[var]) / self.std[var]
    }

    pub fn destandardize_value(&self, var: usize, z: f64) -> f64 {
        z * self.std[var] + self.mean[var]
    }

    pub fn standardize(&self, field: &Array3<f64>) -> Array3<f64> {
        let mut out = field.clone();
        for (v, mut plane) in out.outer_iter_mut().enumerate() {
            plane.mapv_inplace(|x| self.standardize_value(v, x));
        }
        out
    }

    pub fn destandardize(&self, field: &Array3<f64>) -> Array3<f64> {
        let mut out = field.clone();
        for (v, mut plane) in out.outer_iter_mut().enumerate() {
            plane.mapv_inplace(|z| self.destandardize_value(v, z));
        }
        out
    }
}

/// Two-pass per-channel mean and population standard deviation over every
/// sample and grid cell.
pub fn fit_standardizer(samples: &[ArrayView3<'_, f64>], registry: &VariableRegistry) -> Result<NormStats, GridError> {
    if samples.len() < 2 {
        return Err(GridError::InsufficientSteps { needed: 2, got: samples.len() });
    }
    let vars = samples[0].shape()[0];
    if vars != registry.len() {
        return Err(GridError::ShapeMismatch(format!("{vars} channels for {} registry entries", registry.len())));
    }
    let mut stats = NormStats { mean: vec![0.0; vars], std: vec![0.0; vars] };
    for v in 0..vars {
        let mut count = 0usize;
        let mut sum = 0.0;
        for s in samples {
            let plane = s.index_axis(ndarray::Axis(0), v);
            sum += plane.sum();
            count += plane.len();
        }
        let mean = sum / count as f64;
        let mut sq = 0.0;
        for s in samples {
            sq += s.index_axis(ndarray::Axis(0), v).iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        }
        let std = (sq / count as f64).sqrt();
        if std < MIN_STD {
            return Err(GridError::ConstantChannel(registry.get(v).map(|e| e.key()).unwrap_or_default()));
        }
        stats.mean[v] = mean;
        stats.std[v] = std;
    }
    Ok(stats)
}

/// Contiguous time-step counts of the train and validation prefixes; the
/// remaining tail is the test set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: usize,
    pub val: usize,
}

impl Split {
    pub fn from_fractions(steps: usize, train: f64, val: f64) -> Self {
        let train_steps = ((steps as f64) * train).round() as usize;
        let val_steps = ((steps as f64) * val).round() as usize;
        let train_steps = train_steps.min(steps);
        Self { train: train_steps, val: val_steps.min(steps - train_steps) }
    }

    pub fn test_start(&self) -> usize {
        self.train + self.val
    }
}

/// A standardized, validated time series of grids.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSeries {
    pub samples: Vec<GridSample>,
    pub registry: VariableRegistry,
    pub stats: NormStats,
    /// Degrees north for each grid row.
    pub latitudes: Vec<f64>,
    pub split: Split,
}

impl GridSeries {
    pub fn new(
        samples: Vec<GridSample>,
        registry: VariableRegistry,
        stats: NormStats,
        latitudes: Vec<f64>,
        split: Split,
    ) -> Result<Self, GridError> {
        let s = Self { samples, registry, stats, latitudes, split };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let (v, h, w) = self.dims();
        if self.samples.is_empty() {
            return Err(GridError::EmptySeries);
        }
        if self.registry.len() != v {
            return Err(GridError::ShapeMismatch(format!(
                "{} registry entries for {v} variables",
                self.registry.len()
            )));
        }
        if self.stats.len() != v {
            return Err(GridError::ShapeMismatch(format!("{} stats for {v} variables", self.stats.len())));
        }
        if let Some(i) = self.stats.std.iter().position(|&s| !(s >= MIN_STD && s.is_finite())) {
            return Err(GridError::ConstantChannel(self.registry.get(i).map(|e| e.key()).unwrap_or_default()));
        }
        if self.latitudes.len() != h {
            return Err(GridError::BadLatitudes(format!("{} latitudes for {h} rows", self.latitudes.len())));
        }
        if self.latitudes.iter().any(|l| !(-90.0..=90.0).contains(l)) {
            return Err(GridError::BadLatitudes("latitude outside [-90, 90]".into()));
        }
        let increasing = self.latitudes.windows(2).all(|p| p[1] > p[0]);
        let decreasing = self.latitudes.windows(2).all(|p| p[1] < p[0]);
        if !(increasing || decreasing) {
            return Err(GridError::BadLatitudes("latitudes not strictly monotone".into()));
        }
        for (t, s) in self.samples.iter().enumerate() {
            if s.data.dim() != (v, h, w) {
                return Err(GridError::ShapeMismatch(format!("sample {t} has shape {:?}", s.data.dim())));
            }
            if s.data.iter().any(|x| !x.is_finite()) {
                return Err(GridError::NonFinite { step: t });
            }
        }
        if self.samples.len() >= 2 {
            let step = self.samples[1].timestamp - self.samples[0].timestamp;
            if step <= 0 || self.samples.windows(2).any(|p| p[1].timestamp - p[0].timestamp != step) {
                return Err(GridError::BadTimestamps);
            }
        }
        if self.split.test_start() > self.samples.len() {
            return Err(GridError::ShapeMismatch(format!(
                "split {:?} exceeds {} steps",
                self.split,
                self.samples.len()
            )));
        }
        Ok(())
    }

    /// `(V, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let h = self.latitudes.len();
        match self.samples.first() {
            Some(s) => s.data.dim(),
            None => (self.registry.len(), h, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Hours between consecutive samples (1 for a single-sample series).
    pub fn step_hours(&self) -> i64 {
        match self.samples.as_slice() {
            [a, b, ..] => b.timestamp - a.timestamp,
            _ => 1,
        }
    }

    /// Lead time in whole steps; errors when it is not a multiple of the step.
    pub fn lead_steps(&self, lead_hours: i64) -> Result<usize, GridError> {
        let step = self.step_hours();
        if lead_hours <= 0 || lead_hours % step != 0 {
            return Err(GridError::BadLeadTime { lead_hours, step_hours: step });
        }
        Ok((lead_hours / step) as usize)
    }

    /// Input indices `t` in `range` whose target `t + lead` also lies in `range`.
    pub fn pairs_in(&self, range: std::ops::Range<usize>, lead: usize) -> Vec<usize> {
        if range.end < lead || range.end - lead <= range.start {
            return Vec::new();
        }
        (range.start..range.end - lead).collect()
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.split.train
    }

    pub fn val_range(&self) -> std::ops::Range<usize> {
        self.split.train..self.split.test_start()
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.split.test_start()..self.samples.len()
    }

    /// Sample `t` as `f64` in standardized units.
    pub fn field(&self, t: usize) -> Array3<f64> {
        self.samples[t].data.mapv(f64::from)
    }

    /// Sample `t` converted back to physical units.
    pub fn physical_field(&self, t: usize) -> Array3<f64> {
        self.stats.destandardize(&self.field(t))
    }
}
