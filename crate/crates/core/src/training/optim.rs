use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numerics::{ParameterStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

/// First and second moments per parameter plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &ParameterStore) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One AdamW update with decoupled weight decay:
/// `p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`.
pub fn adamw_step(
    params: &mut ParameterStore,
    grads: &[Tensor],
    state: &mut OptimState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} gradients and {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TrainError::ShapeMismatch(format!("{name}: gradient {:?} for {:?}", g.shape(), p.shape())));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x = *x * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Init, ParamSpec};

    fn scalar_store(x: f64) -> ParameterStore {
        let mut s = ParameterStore::from_specs(&[ParamSpec::new("x", &[1], Init::Zeros)], 0).unwrap();
        s.set("x", Tensor::filled(&[1], x)).unwrap();
        s
    }

    fn value(s: &ParameterStore) -> f64 {
        s.get("x").unwrap().data()[0]
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let mut s = scalar_store(2.0);
        let mut st = OptimState::new(&s);
        let cfg = AdamWConfig { weight_decay: 0.1, ..Default::default() };
        adamw_step(&mut s, &[Tensor::zeros(&[1])], &mut st, 0.5, &cfg).unwrap();
        assert_eq!(value(&s), 2.0 * (1.0 - 0.5 * 0.1));
        assert_eq!(st.m[0].data()[0], 0.0);
    }

    #[test]
    fn first_step_hand_computed() {
        let mut s = scalar_store(1.0);
        let mut st = OptimState::new(&s);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut s, &[Tensor::filled(&[1], 1.0)], &mut st, 0.1, &cfg).unwrap();
        // m_hat = 1, v_hat = 1: step = 0.1 / (1 + 1e-8).
        assert!((value(&s) - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut s = scalar_store(3.0);
        let mut st = OptimState::new(&s);
        let cfg = AdamWConfig::default();
        let mut loss = 9.0;
        for _ in 0..2 {
            let g = 2.0 * value(&s);
            adamw_step(&mut s, &[Tensor::filled(&[1], g)], &mut st, 0.1, &cfg).unwrap();
            let next = value(&s).powi(2);
            assert!(next < loss);
            loss = next;
        }
    }

    #[test]
    fn zero_decay_equals_plain_adam() {
        // Reference Adam written independently on a 2-parameter quadratic.
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut s = ParameterStore::from_specs(&[ParamSpec::new("x", &[2], Init::Zeros)], 0).unwrap();
        s.set("x", Tensor::from_vec(&[2], vec![1.5, -0.5]).unwrap()).unwrap();
        let mut st = OptimState::new(&s);
        let (mut x, mut m, mut v) = ([1.5f64, -0.5], [0.0f64; 2], [0.0f64; 2]);
        for t in 1..=20 {
            let g: Vec<f64> =
                s.get("x").unwrap().data().iter().enumerate().map(|(i, xi)| 2.0 * (i + 1) as f64 * xi).collect();
            adamw_step(&mut s, &[Tensor::from_vec(&[2], g).unwrap()], &mut st, 0.05, &cfg).unwrap();
            for i in 0..2 {
                let gi = 2.0 * (i + 1) as f64 * x[i];
                m[i] = 0.9 * m[i] + 0.1 * gi;
                v[i] = 0.999 * v[i] + 0.001 * gi * gi;
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                x[i] -= 0.05 * mh / (vh.sqrt() + 1e-8);
            }
        }
        let got = s.get("x").unwrap().data();
        assert!((got[0] - x[0]).abs() < 1e-10 && (got[1] - x[1]).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut s = scalar_store(1.0);
        let mut st = OptimState::new(&s);
        let cfg = AdamWConfig::default();
        assert!(matches!(
            adamw_step(&mut s, &[Tensor::filled(&[1], f64::NAN)], &mut st, 0.1, &cfg),
            Err(TrainError::NonFiniteGradient(n)) if n == "x"
        ));
        assert!(matches!(
            adamw_step(&mut s, &[Tensor::zeros(&[2])], &mut st, 0.1, &cfg),
            Err(TrainError::ShapeMismatch(_))
        ));
        assert_eq!(st.step, 0);
    }
}
