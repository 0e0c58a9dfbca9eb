//! Full-grid and split-and-stitch forecasting, test-set evaluation and
//! per-variable map export.

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::griddata::{canonical_crops, GridError, GridSeries, Region, DEFAULT_TARGETS};
use crate::metrics::{
    climatology, lat_mse, latitude_weights, AccAccumulator, MetricReport, MetricRow, MetricsError, RmseAccumulator,
};
use crate::model::{Model, ModelError};
use crate::numerics::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("time index {index} out of range: valid inputs are {start}..{end}")]
    IndexOutOfRange { index: usize, start: usize, end: usize },
    #[error("stitched forecast wrote cell ({row}, {col}) {writes} times")]
    StitchCensus { row: usize, col: usize, writes: u32 },
    #[error("no test pairs: {0}")]
    NoTestPairs(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn to_array(t: &Tensor) -> Result<Array3<f64>, InferenceError> {
    match *t.shape() {
        [c, h, w] => Ok(Array3::from_shape_vec((c, h, w), t.data().to_vec()).expect("shape matches length")),
        ref other => Err(InferenceError::ShapeMismatch(format!("forecast has shape {other:?}"))),
    }
}

/// Deterministic full-grid forecast `[V_out, H, W]` in standardized units.
pub fn predict_global(model: &Model, sample: ArrayView3<'_, f64>) -> Result<Array3<f64>, InferenceError> {
    let [h, w] = model.config.image_size;
    to_array(&model.predict(sample, &Region::full(h, w))?)
}

/// Writes each `(region, block)` into a `[channels, h, w]` grid and counts
/// the writes per cell.
pub fn stitch(
    parts: &[(Region, Array3<f64>)],
    channels: usize,
    h: usize,
    w: usize,
) -> Result<(Array3<f64>, Array2<u32>), InferenceError> {
    let mut out = Array3::zeros((channels, h, w));
    let mut writes = Array2::<u32>::zeros((h, w));
    for (r, block) in parts {
        if block.dim() != (channels, r.height, r.width) || r.row_off + r.height > h || r.col_off + r.width > w {
            return Err(InferenceError::ShapeMismatch(format!("block {:?} for region {r:?}", block.dim())));
        }
        let rows = r.row_off..r.row_off + r.height;
        let cols = r.col_off..r.col_off + r.width;
        out.slice_mut(s![.., rows.clone(), cols.clone()]).assign(block);
        writes.slice_mut(s![rows, cols]).mapv_inplace(|n| n + 1);
    }
    Ok((out, writes))
}

/// Predicts every canonical crop of `split` independently (positions stay
/// absolute) and stitches the results into a full grid.
pub fn predict_split(
    model: &Model,
    sample: ArrayView3<'_, f64>,
    split: usize,
    exec: Execution,
) -> Result<Array3<f64>, InferenceError> {
    let [h, w] = model.config.image_size;
    if sample.dim().1 != h || sample.dim().2 != w {
        return Err(InferenceError::ShapeMismatch(format!("sample {:?} for a {h}x{w} model", sample.dim())));
    }
    let crops = canonical_crops(h, w, split, model.config.patch_size)?;
    let parts = exec::try_map(exec, &crops, |r| -> Result<_, InferenceError> {
        let block = to_array(&model.predict(r.extract(sample).view(), r)?)?;
        Ok((*r, block))
    })?;
    let (out, writes) = stitch(&parts, model.config.output_variables, h, w)?;
    if let Some(((row, col), &n)) = writes.indexed_iter().find(|(_, &n)| n != 1) {
        return Err(InferenceError::StitchCensus { row, col, writes: n });
    }
    Ok(out)
}

/// Input indices of the test range whose target is also in the test range.
pub fn test_inputs(series: &GridSeries, lead_hours: i64) -> Result<(Vec<usize>, usize), InferenceError> {
    let lead = series.lead_steps(lead_hours)?;
    let inputs = series.pairs_in(series.test_range(), lead);
    if inputs.is_empty() {
        return Err(InferenceError::NoTestPairs(format!("test range {:?} at lead {lead} steps", series.test_range())));
    }
    Ok((inputs, lead))
}

fn resolve_targets(series: &GridSeries, targets: &[&str]) -> Result<Vec<usize>, InferenceError> {
    let keys: Vec<&str> = if targets.is_empty() { DEFAULT_TARGETS.to_vec() } else { targets.to_vec() };
    Ok(keys.iter().map(|k| series.registry.resolve(k)).collect::<Result<_, _>>()?)
}

fn select(field: &Array3<f64>, channels: &[usize]) -> Array3<f64> {
    field.select(Axis(0), channels)
}

/// Scores an arbitrary forecaster over the test pairs in physical units.
///
/// `forecast(t, x_t)` receives the standardized input and returns the
/// standardized forecast of every variable. The climatology is the time mean
/// of the physical test range.
pub fn evaluate_with<F>(
    series: &GridSeries,
    targets: &[&str],
    lead_hours: i64,
    split: usize,
    exec: Execution,
    forecast: F,
) -> Result<MetricReport, InferenceError>
where
    F: Fn(usize, ArrayView3<'_, f64>) -> Result<Array3<f64>, InferenceError> + Sync + Send,
{
    let channels = resolve_targets(series, targets)?;
    let (inputs, lead) = test_inputs(series, lead_hours)?;
    let weights = latitude_weights(&series.latitudes)?;
    let reference: Vec<Array3<f64>> =
        series.test_range().map(|t| select(&series.physical_field(t), &channels)).collect();
    let views: Vec<_> = reference.iter().map(|a| a.view()).collect();
    let clim = climatology(&views)?;
    let preds = exec::try_map(exec, &inputs, |&t| -> Result<_, InferenceError> {
        let f = forecast(t, series.field(t).view())?;
        if f.dim() != series.field(t).dim() {
            return Err(InferenceError::ShapeMismatch(format!(
                "forecast {:?} for sample {:?}",
                f.dim(),
                series.dims()
            )));
        }
        Ok(select(&series.stats.destandardize(&f), &channels))
    })?;
    let mut rmse = RmseAccumulator::default();
    let mut acc = AccAccumulator::default();
    for (&t, p) in inputs.iter().zip(&preds) {
        let truth = &reference[t + lead - series.test_range().start];
        rmse.push(p.view(), truth.view(), &weights)?;
        acc.push(p.view(), truth.view(), &clim, &weights)?;
    }
    let (rmse, acc) = (rmse.finish()?, acc.finish()?);
    let rows = channels
        .iter()
        .enumerate()
        .map(|(i, &ch)| {
            let e = series.registry.get(ch).expect("resolved");
            MetricRow { variable: e.label(), units: e.units().to_string(), acc: acc[i], rmse: rmse[i] }
        })
        .collect();
    Ok(MetricReport { lead_time_hours: lead_hours, split, samples: inputs.len(), rows })
}

/// Per-target ACC and RMSE of `model` over the test range, predicting with
/// `split` canonical crops (1 = whole grid).
pub fn evaluate(
    model: &Model,
    series: &GridSeries,
    targets: &[&str],
    lead_hours: i64,
    split: usize,
    exec: Execution,
) -> Result<MetricReport, InferenceError> {
    evaluate_with(series, targets, lead_hours, split, exec, |_, x| {
        predict_split(model, x, split, Execution::Sequential)
    })
}

/// Standardized latitude-weighted MSE of a model and of persistence over the
/// test pairs.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Skill {
    pub model_mse: f64,
    pub persistence_mse: f64,
    pub samples: usize,
}

impl Skill {
    /// Model error as a fraction of the persistence error.
    pub fn ratio(&self) -> f64 {
        self.model_mse / self.persistence_mse
    }
}

pub fn skill_vs_persistence(
    model: &Model,
    series: &GridSeries,
    lead_hours: i64,
    exec: Execution,
) -> Result<Skill, InferenceError> {
    let (inputs, lead) = test_inputs(series, lead_hours)?;
    let weights = latitude_weights(&series.latitudes)?;
    let pairs = exec::try_map(exec, &inputs, |&t| -> Result<_, InferenceError> {
        let (x, y) = (series.field(t), series.field(t + lead));
        let p = predict_global(model, x.view())?;
        Ok((lat_mse(p.view(), y.view(), &weights)?, lat_mse(x.view(), y.view(), &weights)?))
    })?;
    let n = pairs.len() as f64;
    Ok(Skill {
        model_mse: pairs.iter().map(|p| p.0).sum::<f64>() / n,
        persistence_mse: pairs.iter().map(|p| p.1).sum::<f64>() / n,
        samples: pairs.len(),
    })
}

/// The four panels of one target variable, physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct MapPanels {
    pub variable: String,
    pub units: String,
    pub initial: Array2<f64>,
    pub truth: Array2<f64>,
    pub prediction: Array2<f64>,
    /// `prediction - truth`.
    pub bias: Array2<f64>,
}

impl MapPanels {
    pub fn panels(&self) -> [(&'static str, &Array2<f64>); 4] {
        [("initial", &self.initial), ("truth", &self.truth), ("prediction", &self.prediction), ("bias", &self.bias)]
    }
}

/// Panels for forecasting from input index `t` with any forecaster.
pub fn maps_with<F>(
    series: &GridSeries,
    t: usize,
    lead_hours: i64,
    targets: &[&str],
    forecast: F,
) -> Result<Vec<MapPanels>, InferenceError>
where
    F: FnOnce(ArrayView3<'_, f64>) -> Result<Array3<f64>, InferenceError>,
{
    let lead = series.lead_steps(lead_hours)?;
    let end = series.len().saturating_sub(lead);
    if t >= end {
        return Err(InferenceError::IndexOutOfRange { index: t, start: 0, end });
    }
    let channels = resolve_targets(series, targets)?;
    let initial = series.physical_field(t);
    let truth = series.physical_field(t + lead);
    let prediction = series.stats.destandardize(&forecast(series.field(t).view())?);
    Ok(channels
        .iter()
        .map(|&ch| {
            let e = series.registry.get(ch).expect("resolved");
            let pick = |a: &Array3<f64>| a.index_axis(Axis(0), ch).to_owned();
            let (p, y) = (pick(&prediction), pick(&truth));
            MapPanels {
                variable: e.label(),
                units: e.units().to_string(),
                initial: pick(&initial),
                bias: &p - &y,
                truth: y,
                prediction: p,
            }
        })
        .collect())
}

pub fn bias_maps(
    model: &Model,
    series: &GridSeries,
    t: usize,
    lead_hours: i64,
    targets: &[&str],
    split: usize,
) -> Result<Vec<MapPanels>, InferenceError> {
    maps_with(series, t, lead_hours, targets, |x| predict_split(model, x, split, Execution::Parallel))
}

/// One grid as CSV, one line per grid row in storage order.
pub fn grid_csv(grid: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in grid.rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests;
