//! Latitude-weighted verification: weights, MSE, RMSE, climatology and ACC.
//!
//! Fields are `[C, H, W]` arrays; every per-variable result is indexed by
//! channel `C`.

mod report;

use ndarray::{Array3, ArrayView3, Axis};
use thiserror::Error;

pub use report::{MetricReport, MetricRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no latitudes given")]
    EmptyLatitudes,
    #[error("latitude {0} outside [-90, 90]")]
    BadLatitude(f64),
    #[error("latitude weights sum to zero")]
    DegenerateWeights,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no samples")]
    EmptySeries,
    #[error("{which} anomalies of channel {channel} have zero weighted variance")]
    ZeroAnomalyVariance { channel: usize, which: &'static str },
}

/// `L(h) = cos(lat_h) / mean_h cos(lat_h)`.
pub fn latitude_weights(latitudes: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if latitudes.is_empty() {
        return Err(MetricsError::EmptyLatitudes);
    }
    if let Some(&bad) = latitudes.iter().find(|l| !(-90.0..=90.0).contains(*l)) {
        return Err(MetricsError::BadLatitude(bad));
    }
    let cos: Vec<f64> = latitudes.iter().map(|l| l.to_radians().cos().max(0.0)).collect();
    let mean = cos.iter().sum::<f64>() / cos.len() as f64;
    if mean <= 0.0 {
        return Err(MetricsError::DegenerateWeights);
    }
    Ok(cos.iter().map(|c| c / mean).collect())
}

fn check_pair(a: ArrayView3<'_, f64>, b: ArrayView3<'_, f64>, weights: &[f64]) -> Result<(), MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if weights.len() != a.dim().1 {
        return Err(MetricsError::ShapeMismatch(format!("{} weights for {} rows", weights.len(), a.dim().1)));
    }
    Ok(())
}

/// `(1/(H W)) sum_{h,w} L(h) (pred - truth)^2` for each channel.
pub fn lat_mse_per_variable(
    pred: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    weights: &[f64],
) -> Result<Vec<f64>, MetricsError> {
    check_pair(pred, truth, weights)?;
    let (_, h, w) = pred.dim();
    Ok(pred
        .outer_iter()
        .zip(truth.outer_iter())
        .map(|(p, t)| {
            let mut sum = 0.0;
            for (((row, _), a), b) in p.indexed_iter().zip(t.iter()) {
                sum += weights[row] * (a - b) * (a - b);
            }
            sum / (h * w) as f64
        })
        .collect())
}

/// Channel mean of [`lat_mse_per_variable`]; the training loss for one sample.
pub fn lat_mse(pred: ArrayView3<'_, f64>, truth: ArrayView3<'_, f64>, weights: &[f64]) -> Result<f64, MetricsError> {
    let per = lat_mse_per_variable(pred, truth, weights)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Mean of [`lat_mse`] over a batch.
pub fn lat_mse_batch(
    preds: &[ArrayView3<'_, f64>],
    truths: &[ArrayView3<'_, f64>],
    weights: &[f64],
) -> Result<f64, MetricsError> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        total += lat_mse(*p, *t, weights)?;
    }
    Ok(total / preds.len() as f64)
}

/// Running per-channel RMSE: the square root is taken per sample, then
/// averaged over samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RmseAccumulator {
    sums: Vec<f64>,
    count: usize,
}

impl RmseAccumulator {
    pub fn push(
        &mut self,
        pred: ArrayView3<'_, f64>,
        truth: ArrayView3<'_, f64>,
        weights: &[f64],
    ) -> Result<(), MetricsError> {
        let per = lat_mse_per_variable(pred, truth, weights)?;
        if self.sums.is_empty() {
            self.sums = vec![0.0; per.len()];
        } else if self.sums.len() != per.len() {
            return Err(MetricsError::ShapeMismatch(format!("{} channels after {}", per.len(), self.sums.len())));
        }
        for (s, m) in self.sums.iter_mut().zip(per) {
            *s += m.sqrt();
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<Vec<f64>, MetricsError> {
        if self.count == 0 {
            return Err(MetricsError::EmptySeries);
        }
        Ok(self.sums.iter().map(|s| s / self.count as f64).collect())
    }
}

pub fn lat_rmse(
    preds: &[ArrayView3<'_, f64>],
    truths: &[ArrayView3<'_, f64>],
    weights: &[f64],
) -> Result<Vec<f64>, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let mut acc = RmseAccumulator::default();
    for (p, t) in preds.iter().zip(truths) {
        acc.push(*p, *t, weights)?;
    }
    acc.finish()
}

/// Pointwise time mean `[C, H, W]` of a reference set.
#[derive(Clone, Debug, PartialEq)]
pub struct Climatology {
    pub field: Array3<f64>,
}

pub fn climatology(samples: &[ArrayView3<'_, f64>]) -> Result<Climatology, MetricsError> {
    let first = samples.first().ok_or(MetricsError::EmptySeries)?;
    let mut sum = Array3::<f64>::zeros(first.dim());
    for s in samples {
        if s.dim() != first.dim() {
            return Err(MetricsError::ShapeMismatch(format!("{:?} vs {:?}", s.dim(), first.dim())));
        }
        sum += s;
    }
    Ok(Climatology { field: sum / samples.len() as f64 })
}

/// Pooled per-channel sufficient statistics of the anomaly correlation:
/// `sum L a b`, `sum L a^2`, `sum L b^2` over every sample and cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccAccumulator {
    cross: Vec<f64>,
    pred_sq: Vec<f64>,
    truth_sq: Vec<f64>,
}

impl AccAccumulator {
    pub fn push(
        &mut self,
        pred: ArrayView3<'_, f64>,
        truth: ArrayView3<'_, f64>,
        clim: &Climatology,
        weights: &[f64],
    ) -> Result<(), MetricsError> {
        check_pair(pred, truth, weights)?;
        if clim.field.dim() != pred.dim() {
            return Err(MetricsError::ShapeMismatch(format!("climatology {:?} vs {:?}", clim.field.dim(), pred.dim())));
        }
        let c = pred.dim().0;
        if self.cross.is_empty() {
            *self = Self { cross: vec![0.0; c], pred_sq: vec![0.0; c], truth_sq: vec![0.0; c] };
        } else if self.cross.len() != c {
            return Err(MetricsError::ShapeMismatch(format!("{c} channels after {}", self.cross.len())));
        }
        for ch in 0..c {
            let (p, t, m) =
                (pred.index_axis(Axis(0), ch), truth.index_axis(Axis(0), ch), clim.field.index_axis(Axis(0), ch));
            for ((row, col), &pv) in p.indexed_iter() {
                let a = pv - m[[row, col]];
                let b = t[[row, col]] - m[[row, col]];
                let l = weights[row];
                self.cross[ch] += l * a * b;
                self.pred_sq[ch] += l * a * a;
                self.truth_sq[ch] += l * b * b;
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<Vec<f64>, MetricsError> {
        if self.cross.is_empty() {
            return Err(MetricsError::EmptySeries);
        }
        (0..self.cross.len())
            .map(|ch| {
                if self.pred_sq[ch] <= 0.0 {
                    return Err(MetricsError::ZeroAnomalyVariance { channel: ch, which: "prediction" });
                }
                if self.truth_sq[ch] <= 0.0 {
                    return Err(MetricsError::ZeroAnomalyVariance { channel: ch, which: "truth" });
                }
                Ok(self.cross[ch] / (self.pred_sq[ch] * self.truth_sq[ch]).sqrt())
            })
            .collect()
    }
}

pub fn lat_acc(
    preds: &[ArrayView3<'_, f64>],
    truths: &[ArrayView3<'_, f64>],
    clim: &Climatology,
    weights: &[f64],
) -> Result<Vec<f64>, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let mut acc = AccAccumulator::default();
    for (p, t) in preds.iter().zip(truths) {
        acc.push(*p, *t, clim, weights)?;
    }
    acc.finish()
}
