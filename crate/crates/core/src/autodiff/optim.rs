//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// `p ← p − lr · (m̂ / (√v̂ + ε) + wd · p)`.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), AutodiffError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "adam_step: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "adam_step: param {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            let mi = &mut m.data_mut()[i];
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            let vi = &mut v.data_mut()[i];
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m.data()[i] / bc1;
            let v_hat = v.data()[i] / bc2;
            pd[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * pd[i]);
        }
    }
    Ok(())
}

/// Scales all gradients down so their joint norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let total = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let s = max_norm / total;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_training_setup() {
        let c = AdamConfig::default();
        assert_eq!((c.lr, c.beta1, c.beta2, c.weight_decay), (0.0002, 0.9, 0.999, 1e-5));
    }

    #[test]
    fn zero_gradient_only_applies_weight_decay() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::row(vec![1.0, -2.0])).unwrap();
        let mut state = AdamState::new(&store);
        let cfg = AdamConfig::default();
        let grads = vec![Tensor::zeros(&[1, 2])];
        adam_step(store.values_mut(), &grads, &mut state, &cfg).unwrap();
        let p = store.value(store.id("p").unwrap()).data();
        assert_eq!(p[0], 1.0 - cfg.lr * cfg.weight_decay * 1.0);
        assert_eq!(p[1], -2.0 - cfg.lr * cfg.weight_decay * -2.0);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        // scalar simulation of the moment recursions
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        let mut store = ParamStore::new();
        store.insert("p", Tensor::scalar(0.0)).unwrap();
        let mut state = AdamState::new(&store);
        let g = vec![Tensor::scalar(3.7)];
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..5000 {
            adam_step(store.values_mut(), &g, &mut state, &cfg).unwrap();
            let now = store.values_mut()[0].data()[0];
            last_step = prev - now;
            prev = now;
        }
        assert!((last_step - cfg.lr).abs() < 1e-9 * cfg.lr.max(1.0) + 1e-12, "{last_step}");
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::zeros(&[2, 2])).unwrap();
        let mut state = AdamState::new(&store);
        let grads = vec![Tensor::zeros(&[4, 1])];
        assert!(adam_step(store.values_mut(), &grads, &mut state, &AdamConfig::default()).is_err());
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = vec![Tensor::row(vec![3.0, 4.0]), Tensor::row(vec![0.0])];
        let before = clip_grad_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        let after: f64 = g.iter().map(|t| t.norm().powi(2)).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
