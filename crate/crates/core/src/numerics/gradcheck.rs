//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use super::{Graph, Mode, NodeId, NumericsError, Tensor};
use crate::exec::{self, Execution};

/// Default perturbation size for 64-bit checks.
pub const DEFAULT_EPS: f64 = 1e-4;
/// Pass threshold on `|analytic - numeric| / max(1, |analytic|)`.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// One scalar coordinate: element `index` of input tensor `tensor`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Coord {
    pub tensor: usize,
    pub index: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    /// Largest relative error seen for each input tensor (0 if none sampled).
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every coordinate; `eval`
/// receives the coordinate and the signed shift to apply.
pub fn central_differences<F>(coords: &[Coord], eps: f64, exec: Execution, eval: F) -> Vec<f64>
where
    F: Fn(Coord, f64) -> f64 + Sync,
{
    exec::map(exec, coords, |&c| (eval(c, eps) - eval(c, -eps)) / (2.0 * eps))
}

pub fn compare(coords: &[Coord], analytic: &[f64], numeric: &[f64], inputs: usize, tolerance: f64) -> GradCheckReport {
    let mut per_input = vec![0.0f64; inputs];
    for ((c, a), n) in coords.iter().zip(analytic).zip(numeric) {
        let e = rel_error(*a, *n);
        per_input[c.tensor] = per_input[c.tensor].max(e);
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    GradCheckReport { per_input, max_rel_error, checked: coords.len(), tolerance, passed: max_rel_error < tolerance }
}

/// Every coordinate of every input.
pub fn all_coords(inputs: &[Tensor]) -> Vec<Coord> {
    inputs.iter().enumerate().flat_map(|(t, x)| (0..x.len()).map(move |index| Coord { tensor: t, index })).collect()
}

/// At least one coordinate from every non-empty tensor, then uniform draws
/// over all scalars until `count` coordinates are chosen. Deterministic for a
/// given seed.
pub fn sample_coords(shapes: &[&[usize]], count: usize, seed: u64) -> Vec<Coord> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let total: usize = sizes.iter().sum();
    let mut out: Vec<Coord> = sizes
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(t, &n)| Coord { tensor: t, index: rng.gen_range(0..n) })
        .collect();
    while out.len() < count && total > 0 {
        let mut flat = rng.gen_range(0..total);
        let tensor = sizes
            .iter()
            .position(|&n| {
                if flat < n {
                    true
                } else {
                    flat -= n;
                    false
                }
            })
            .expect("flat index in range");
        out.push(Coord { tensor, index: flat });
    }
    out
}

fn evaluate<F>(inputs: &[Tensor], build: &F) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph<'_>, &[NodeId]) -> Result<NodeId, NumericsError>,
{
    let mut g = Graph::new(Mode::Eval, 0);
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    Ok(g.value(loss).data()[0])
}

/// Analytic gradients of the scalar built by `build` with respect to each input.
pub fn analytic_gradients<F>(inputs: &[Tensor], build: &F) -> Result<Vec<Tensor>, NumericsError>
where
    F: Fn(&mut Graph<'_>, &[NodeId]) -> Result<NodeId, NumericsError>,
{
    let mut g = Graph::new(Mode::Eval, 0);
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;
    Ok(ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Full check of every input coordinate. `build` receives leaf handles for
/// `inputs` (in order) and returns a scalar node.
pub fn grad_check<F>(inputs: &[Tensor], eps: f64, build: F) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph<'_>, &[NodeId]) -> Result<NodeId, NumericsError> + Sync,
{
    let analytic = analytic_gradients(inputs, &build)?;
    let coords = all_coords(inputs);
    evaluate(inputs, &build)?;
    let numeric = central_differences(&coords, eps, Execution::default(), |c, delta| {
        let mut shifted = inputs.to_vec();
        shifted[c.tensor].data_mut()[c.index] += delta;
        evaluate(&shifted, &build).expect("shape validated by the unshifted pass")
    });
    let flat: Vec<f64> = coords.iter().map(|c| analytic[c.tensor].data()[c.index]).collect();
    Ok(compare(&coords, &flat, &numeric, inputs.len(), DEFAULT_TOLERANCE))
}
