//! Synthetic stand-in for reanalysis data.
//!
//! Each channel is a nominal physical mean plus a sum of zonally travelling
//! waves shared across channels; channels differ by per-wave amplitude and
//! phase offset. The wave coordinates at a grid cell evolve by a fixed
//! rotation, so `X_{t+dt}` is a (cell-wise affine) function of `X_t` whenever
//! there are at least twice as many channels as waves.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit_standardizer, GridError, GridSample, GridSeries, NormStats, Split, VariableEntry, VariableRegistry};
use crate::exec::{self, Execution};

/// 2006-01-01T00:00Z in hours since the Unix epoch.
pub const DEFAULT_START_HOUR: i64 = 315_576;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub variables: usize,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub seed: u64,
    pub step_hours: i64,
    pub start_hour: i64,
    /// Number of travelling waves shared by all channels.
    pub waves: usize,
    /// Multiplier on every wave's phase speed; 0 freezes the field.
    pub advection: f64,
    /// Row latitudes in degrees; defaults to the equal-angle grid.
    pub latitudes: Option<Vec<f64>>,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            variables: 47,
            height: 32,
            width: 64,
            steps: 512,
            seed: 0,
            step_hours: 1,
            start_hour: DEFAULT_START_HOUR,
            waves: 3,
            advection: 1.0,
            latitudes: None,
            train_fraction: 0.7,
            val_fraction: 0.1,
        }
    }
}

/// Cell-centre latitudes of an equal-angle grid with `rows` rows, south to
/// north. For 32 rows this is the 5.625 degree grid (-87.1875 .. 87.1875).
pub fn equal_angle_latitudes(rows: usize) -> Vec<f64> {
    let spacing = 180.0 / rows as f64;
    (0..rows).map(|i| -90.0 + spacing * (i as f64 + 0.5)).collect()
}

/// Nominal (mean, amplitude) of a channel in physical units.
fn nominal(entry: &VariableEntry) -> (f64, f64) {
    const G: f64 = 9.80665;
    let level_height = |l: u32| match l {
        50 => 20_600.0,
        250 => 10_400.0,
        500 => 5_600.0,
        600 => 4_200.0,
        700 => 3_000.0,
        850 => 1_500.0,
        925 => 760.0,
        _ => 16_000.0 * (1013.0 / l.max(1) as f64).ln() / 2.3,
    };
    let level_temp = |l: u32| match l {
        50 => 210.0,
        250 => 222.0,
        500 => 253.0,
        600 => 261.0,
        700 => 268.0,
        850 => 275.0,
        _ => 280.0,
    };
    match (entry.name.as_str(), entry.level) {
        ("lsm", _) => (0.35, 0.3),
        ("orography", _) => (3_700.0, 4_000.0),
        ("t2m", _) => (278.0, 18.0),
        ("u10", _) => (0.0, 5.0),
        ("v10", _) => (0.0, 4.0),
        ("z", Some(l)) => (G * level_height(l), 40.0 * G * (1.0 + l as f64 / 250.0)),
        ("t", Some(l)) => (level_temp(l), 10.0),
        ("u", Some(l)) => (if l <= 250 { 12.0 } else { 5.0 }, 10.0),
        ("v", Some(_)) => (0.0, 7.0),
        ("q", Some(l)) => {
            let m = 0.007 * (l as f64 / 925.0).powi(3);
            (m, 0.5 * m)
        }
        ("r", Some(_)) => (60.0, 20.0),
        _ => (0.0, 1.0),
    }
}

struct Wave {
    zonal: f64,
    meridional: f64,
    meridional_phase: f64,
    omega: f64,
}

struct Channel {
    mean: f64,
    amplitude: f64,
    weights: Vec<f64>,
    phases: Vec<f64>,
}

fn validate(config: &SynthConfig) -> Result<Vec<f64>, GridError> {
    if config.variables == 0 || config.height == 0 || config.width == 0 || config.steps == 0 || config.waves == 0 {
        return Err(GridError::InvalidConfig("variables, height, width, steps and waves must be positive".into()));
    }
    if config.step_hours <= 0 {
        return Err(GridError::InvalidConfig("step_hours must be positive".into()));
    }
    if !config.advection.is_finite() {
        return Err(GridError::InvalidConfig("advection must be finite".into()));
    }
    let ok_frac = |f: f64| (0.0..=1.0).contains(&f);
    if !ok_frac(config.train_fraction)
        || !ok_frac(config.val_fraction)
        || config.train_fraction + config.val_fraction > 1.0
    {
        return Err(GridError::InvalidConfig("train/val fractions must lie in [0, 1] and sum to at most 1".into()));
    }
    let lats = config.latitudes.clone().unwrap_or_else(|| equal_angle_latitudes(config.height));
    if lats.len() != config.height {
        return Err(GridError::BadLatitudes(format!("{} latitudes for height {}", lats.len(), config.height)));
    }
    Ok(lats)
}

/// Registry, latitudes and per-step fields of a raw synthetic series.
pub type RawSeries = (VariableRegistry, Vec<f64>, Vec<Array3<f64>>);

/// Physical-unit fields, one `[V, H, W]` array per step.
pub fn generate_raw(config: &SynthConfig) -> Result<RawSeries, GridError> {
    let latitudes = validate(config)?;
    let registry = VariableRegistry::synthetic(config.variables)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let waves: Vec<Wave> = (0..config.waves)
        .map(|m| {
            let zonal = (1 + m % 3) as f64;
            let period_hours = rng.gen_range(20.0..40.0);
            let direction = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            Wave {
                zonal,
                meridional: (1 + (m + 1) % 3) as f64,
                meridional_phase: rng.gen_range(0.0..2.0 * PI),
                omega: direction * config.advection * 2.0 * PI / period_hours,
            }
        })
        .collect();
    let channels: Vec<Channel> = registry
        .entries()
        .iter()
        .map(|e| {
            let (mean, amplitude) = nominal(e);
            Channel {
                mean,
                amplitude,
                weights: (0..config.waves).map(|_| rng.gen_range(0.3..1.0)).collect(),
                phases: (0..config.waves).map(|_| rng.gen_range(0.0..2.0 * PI)).collect(),
            }
        })
        .collect();
    let norm = (config.waves as f64).sqrt();
    let (h, w) = (config.height, config.width);
    let envelopes: Vec<Vec<f64>> = waves
        .iter()
        .map(|wave| {
            latitudes
                .iter()
                .map(|lat| 0.6 + 0.4 * (wave.meridional * lat.to_radians() + wave.meridional_phase).cos())
                .collect()
        })
        .collect();
    let steps: Vec<usize> = (0..config.steps).collect();
    let fields = exec::map(Execution::default(), &steps, |&t| {
        let hours = (t as i64 * config.step_hours) as f64;
        Array3::from_shape_fn((channels.len(), h, w), |(v, i, j)| {
            let lon = 2.0 * PI * j as f64 / w as f64;
            let ch = &channels[v];
            let signal: f64 = waves
                .iter()
                .enumerate()
                .map(|(m, wave)| {
                    ch.weights[m] * envelopes[m][i] * (wave.zonal * lon - wave.omega * hours + ch.phases[m]).sin()
                })
                .sum();
            ch.mean + ch.amplitude * signal / norm
        })
    });
    Ok((registry, latitudes, fields))
}

/// Generates, standardizes with statistics fit on the training prefix, and
/// packages a validated series.
pub fn generate_synthetic(config: &SynthConfig) -> Result<GridSeries, GridError> {
    let (registry, latitudes, fields) = generate_raw(config)?;
    let split = Split::from_fractions(config.steps, config.train_fraction, config.val_fraction);
    let fit_on = split.train.max(2).min(fields.len());
    let views: Vec<_> = fields[..fit_on].iter().map(|f| f.view()).collect();
    let stats: NormStats = fit_standardizer(&views, &registry)?;
    let samples = fields
        .iter()
        .enumerate()
        .map(|(t, f)| GridSample {
            data: stats.standardize(f).mapv(|x| x as f32),
            timestamp: config.start_hour + t as i64 * config.step_hours,
        })
        .collect();
    GridSeries::new(samples, registry, stats, latitudes, split)
}
