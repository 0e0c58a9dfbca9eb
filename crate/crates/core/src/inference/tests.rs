use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::griddata::{generate_synthetic, SynthConfig};
use crate::model::ModelConfig;
use crate::training::{AdamWConfig, CropMode, TrainPlan, Trainer};

fn tiny() -> ModelConfig {
    ModelConfig {
        image_size: [8, 8],
        patch_size: 2,
        embed_dim: 16,
        num_representatives: 2,
        stream_dim: None,
        num_blocks: 2,
        heads: 2,
        mlp_ratio: 2,
        mixing_interval: 1,
        share_spatial_weights: false,
        head_depth: 1,
        head_hidden: 16,
        drop_rate: 0.1,
        drop_path: 0.1,
        num_variables: 4,
        output_variables: 4,
    }
}

fn randomized(config: ModelConfig, seed: u64, scale: f64) -> Model {
    let mut m = Model::new(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    for t in m.params.tensors_mut() {
        for x in t.data_mut() {
            *x = scale * rng.gen_range(-1.0..1.0);
        }
    }
    m
}

fn random_field(dim: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_simple_fn(dim, || rng.gen_range(-2.0..2.0))
}

fn series(steps: usize, advection: f64) -> GridSeries {
    generate_synthetic(&SynthConfig {
        variables: 4,
        height: 8,
        width: 8,
        steps,
        seed: 2,
        advection,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn global_forecast_is_deterministic_and_grid_shaped() {
    let m = randomized(tiny(), 1, 0.3);
    let x = random_field((4, 8, 8), 2);
    let a = predict_global(&m, x.view()).unwrap();
    assert_eq!(a.dim(), (4, 8, 8));
    assert_eq!(a, predict_global(&m, x.view()).unwrap());
}

#[test]
fn unit_split_is_bitwise_global() {
    let m = randomized(tiny(), 3, 0.3);
    let x = random_field((4, 8, 8), 4);
    let g = predict_global(&m, x.view()).unwrap();
    let s = predict_split(&m, x.view(), 1, Execution::Parallel).unwrap();
    assert!(g.iter().zip(&s).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn stitch_census() {
    let crops = canonical_crops(8, 8, 2, 2).unwrap();
    let parts: Vec<_> = crops.iter().enumerate().map(|(i, r)| (*r, Array3::from_elem((2, 4, 4), i as f64))).collect();
    let (out, writes) = stitch(&parts, 2, 8, 8).unwrap();
    assert!(writes.iter().all(|&n| n == 1));
    assert_eq!(out[[1, 0, 7]], 1.0);
    assert_eq!(out[[0, 7, 0]], 2.0);
    let mut overlapping = parts.clone();
    overlapping[1].0 = crops[0];
    let (_, writes) = stitch(&overlapping, 2, 8, 8).unwrap();
    assert_eq!(writes[[0, 0]], 2);
    assert_eq!(writes[[0, 7]], 0);
}

#[test]
fn zero_positions_make_crops_match_global_on_tiled_input() {
    // Without positional embeddings the model sees a set of tokens. An input
    // that repeats with the crop period presents each crop's token set four
    // times globally, and duplicating every key leaves softmax averages
    // unchanged, so crop forecasts equal the global forecast.
    let mut m = randomized(tiny(), 5, 0.4);
    m.params.set("embed.position", Tensor::zeros(&[16, 16])).unwrap();
    let tile = random_field((4, 4, 4), 6);
    let x = Array3::from_shape_fn((4, 8, 8), |(v, i, j)| tile[[v, i % 4, j % 4]]);
    let g = predict_global(&m, x.view()).unwrap();
    let s = predict_split(&m, x.view(), 2, Execution::Parallel).unwrap();
    let diff = g.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6, "diff {diff}");
    // With positions the crops see different embeddings.
    let m = randomized(tiny(), 5, 0.4);
    let g = predict_global(&m, x.view()).unwrap();
    let s = predict_split(&m, x.view(), 2, Execution::Parallel).unwrap();
    assert!(g.iter().zip(&s).any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn indivisible_split_is_rejected() {
    let m = randomized(tiny(), 1, 0.3);
    let x = random_field((4, 8, 8), 2);
    assert!(matches!(
        predict_split(&m, x.view(), 3, Execution::Parallel),
        Err(InferenceError::Grid(GridError::IndivisibleGrid { .. }))
    ));
}

#[test]
fn overfit_model_reproduces_frozen_target() {
    let s = series(14, 0.0);
    let config = ModelConfig {
        patch_size: 1,
        embed_dim: 32,
        num_blocks: 1,
        head_depth: 0,
        drop_rate: 0.0,
        drop_path: 0.0,
        ..tiny()
    };
    let plan = TrainPlan {
        epochs: 200,
        warmup_epochs: 20,
        batch_size: 8,
        accumulation_steps: 1,
        split: 1,
        crop_mode: CropMode::Canonical,
        lead_time_hours: 2,
        seed: 5,
        lr_peak: 2e-2,
        optimizer: AdamWConfig::default(),
        execution: Execution::Parallel,
    };
    let mut t = Trainer::new(Model::new(config, 3).unwrap(), plan, &s).unwrap();
    t.fit(&s, None).unwrap();
    let w = latitude_weights(&s.latitudes).unwrap();
    let x = s.field(0);
    let p = predict_global(&t.model, x.view()).unwrap();
    let rmse = crate::metrics::lat_rmse(&[p.view()], &[s.field(2).view()], &w).unwrap();
    assert!(rmse.iter().all(|&r| r < 0.05), "{rmse:?}");
}

#[test]
fn replayed_truth_scores_perfectly() {
    let s = series(60, 1.0);
    let lead = s.lead_steps(6).unwrap();
    let report = evaluate_with(&s, &[], 6, 1, Execution::Parallel, |t, _| Ok(s.field(t + lead))).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.variable.as_str()).collect();
    assert_eq!(names, ["U10", "T2m", "Z500", "T850"]);
    let units: Vec<&str> = report.rows.iter().map(|r| r.units.as_str()).collect();
    assert_eq!(units, ["m/s", "K", "m^2/s^2", "K"]);
    for r in &report.rows {
        assert!((r.acc - 1.0).abs() < 1e-12 && r.rmse < 1e-9, "{r:?}");
    }
}

#[test]
fn climatology_forecast_has_no_anomaly() {
    let s = series(60, 1.0);
    let lead = s.lead_steps(6).unwrap();
    let channels = resolve_targets(&s, &[]).unwrap();
    let test: Vec<Array3<f64>> = s.test_range().map(|t| s.physical_field(t)).collect();
    let views: Vec<_> = test.iter().map(|a| a.view()).collect();
    let clim_full = climatology(&views).unwrap().field;
    let clim_std = s.stats.standardize(&clim_full);
    let err = evaluate_with(&s, &[], 6, 1, Execution::Sequential, |_, _| Ok(clim_std.clone())).unwrap_err();
    assert!(matches!(err, InferenceError::Metrics(MetricsError::ZeroAnomalyVariance { which: "prediction", .. })));

    // RMSE of the climatology forecast is the weighted norm of the truth anomaly.
    let (inputs, _) = test_inputs(&s, 6).unwrap();
    let w = latitude_weights(&s.latitudes).unwrap();
    let mut rmse = RmseAccumulator::default();
    for &t in &inputs {
        let p = select(&s.stats.destandardize(&clim_std), &channels);
        rmse.push(p.view(), select(&s.physical_field(t + lead), &channels).view(), &w).unwrap();
    }
    let rmse = rmse.finish().unwrap();
    for (ci, &ch) in channels.iter().enumerate() {
        let mut total = 0.0;
        for &t in &inputs {
            let truth = s.physical_field(t + lead);
            let mut sq = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    sq += w[i] * (truth[[ch, i, j]] - clim_full[[ch, i, j]]).powi(2);
                }
            }
            total += (sq / 64.0).sqrt();
        }
        let expected = total / inputs.len() as f64;
        assert!((rmse[ci] - expected).abs() <= 1e-8 * expected.max(1.0));
    }
}

#[test]
fn model_report_matches_brute_force() {
    let s = series(60, 1.0);
    let m = randomized(tiny(), 9, 0.3);
    let report = evaluate(&m, &s, &["z500", "t2m"], 6, 1, Execution::Parallel).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.variable.as_str()).collect::<Vec<_>>(), ["Z500", "T2m"]);
    let lead = s.lead_steps(6).unwrap();
    let w = latitude_weights(&s.latitudes).unwrap();
    let test: Vec<usize> = s.test_range().collect();
    let inputs: Vec<usize> = test.iter().copied().filter(|t| t + lead < s.len()).collect();
    assert_eq!(report.samples, inputs.len());
    for (row, key) in report.rows.iter().zip(["z500", "t2m"]) {
        let ch = s.registry.resolve(key).unwrap();
        let mut clim = [[0.0; 8]; 8];
        for &t in &test {
            let f = s.physical_field(t);
            for i in 0..8 {
                for j in 0..8 {
                    clim[i][j] += f[[ch, i, j]] / test.len() as f64;
                }
            }
        }
        let (mut rmse, mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0, 0.0);
        for &t in &inputs {
            let p = s.stats.destandardize(&predict_global(&m, s.field(t).view()).unwrap());
            let y = s.physical_field(t + lead);
            let mut sq = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    let (pv, yv) = (p[[ch, i, j]], y[[ch, i, j]]);
                    sq += w[i] * (pv - yv).powi(2);
                    let (a, b) = (pv - clim[i][j], yv - clim[i][j]);
                    ab += w[i] * a * b;
                    aa += w[i] * a * a;
                    bb += w[i] * b * b;
                }
            }
            rmse += (sq / 64.0).sqrt();
        }
        rmse /= inputs.len() as f64;
        let acc = ab / (aa * bb).sqrt();
        assert!((row.rmse - rmse).abs() <= 1e-8 * rmse.max(1.0), "{} vs {rmse}", row.rmse);
        assert!((row.acc - acc).abs() <= 1e-8, "{} vs {acc}", row.acc);
    }
}

#[test]
fn evaluation_is_order_invariant() {
    let s = series(60, 1.0);
    let m = randomized(tiny(), 9, 0.3);
    let par = evaluate(&m, &s, &[], 6, 1, Execution::Parallel).unwrap();
    let seq = evaluate(&m, &s, &[], 6, 1, Execution::Sequential).unwrap();
    assert_eq!(par, seq);
    // Reversing the pooled accumulation order changes only rounding.
    let (inputs, lead) = test_inputs(&s, 6).unwrap();
    let channels = resolve_targets(&s, &[]).unwrap();
    let w = latitude_weights(&s.latitudes).unwrap();
    let test: Vec<Array3<f64>> = s.test_range().map(|t| select(&s.physical_field(t), &channels)).collect();
    let clim = climatology(&test.iter().map(|a| a.view()).collect::<Vec<_>>()).unwrap();
    let mut acc = AccAccumulator::default();
    for &t in inputs.iter().rev() {
        let p = select(&s.stats.destandardize(&predict_global(&m, s.field(t).view()).unwrap()), &channels);
        acc.push(p.view(), select(&s.physical_field(t + lead), &channels).view(), &clim, &w).unwrap();
    }
    for (r, a) in par.rows.iter().zip(acc.finish().unwrap()) {
        assert!((r.acc - a).abs() < 1e-12);
    }
}

#[test]
fn skill_of_persistence_is_one() {
    let s = series(60, 1.0);
    let mut m = Model::new(tiny(), 0).unwrap();
    // A zero head forecasts the standardized mean everywhere.
    for (name, t) in m.params.iter_mut() {
        if name.starts_with("head.") {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let skill = skill_vs_persistence(&m, &s, 6, Execution::Parallel).unwrap();
    assert!(skill.persistence_mse > 0.0);
    let w = latitude_weights(&s.latitudes).unwrap();
    let (inputs, lead) = test_inputs(&s, 6).unwrap();
    let zero_mse: f64 = inputs
        .iter()
        .map(|&t| lat_mse(Array3::zeros((4, 8, 8)).view(), s.field(t + lead).view(), &w).unwrap())
        .sum::<f64>()
        / inputs.len() as f64;
    assert!((skill.model_mse - zero_mse).abs() < 1e-12);
    assert_eq!(skill.samples, inputs.len());
}

#[test]
fn maps_have_four_panels_and_zero_bias_for_replay() {
    let s = series(60, 1.0);
    let lead = s.lead_steps(6).unwrap();
    let maps = maps_with(&s, 10, 6, &[], |_| Ok(s.field(10 + lead))).unwrap();
    assert_eq!(maps.len(), 4);
    for m in &maps {
        assert_eq!(m.panels().len(), 4);
        assert!(m.bias.iter().all(|&b| b == 0.0));
        assert_eq!(m.truth.dim(), (8, 8));
    }
    assert_eq!(maps[0].initial, s.physical_field(10).index_axis(Axis(0), 0));
    let err = maps_with(&s, 60 - lead, 6, &[], |x| Ok(x.to_owned())).unwrap_err();
    assert_eq!(err, InferenceError::IndexOutOfRange { index: 60 - lead, start: 0, end: 60 - lead });
    let m = randomized(tiny(), 9, 0.3);
    let maps = bias_maps(&m, &s, 3, 6, &["t850"], 2).unwrap();
    assert_eq!(maps[0].variable, "T850");
    assert_eq!(maps[0].bias, &maps[0].prediction - &maps[0].truth);
}

#[test]
fn csv_rows_match_grid() {
    let g = ndarray::arr2(&[[1.0, 2.5], [-3.0, 0.0]]);
    assert_eq!(grid_csv(&g), "1,2.5\n-3,0\n");
}
