use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay coefficient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0005,
        }
    }
}

/// One Adam update with bias correction for the 1-based `step`.
/// Moment buffers live in the store alongside each parameter.
pub fn adam_step(params: &mut ParamStore, cfg: &AdamConfig, step: u64) {
    let ids: Vec<ParamId> = params.ids().collect();
    adam_step_for(params, &ids, cfg, step);
}

/// Adam restricted to `ids`; every other entry is left untouched, decay included.
pub fn adam_step_for(params: &mut ParamStore, ids: &[ParamId], cfg: &AdamConfig, step: u64) {
    let step = step.max(1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(step);
    let bc2 = 1.0 - cfg.beta2.powi(step);
    for &id in ids {
        let p = params.param_mut(id);
        let n = p.value.len();
        for k in 0..n {
            let g = p.grad.data()[k];
            let m = cfg.beta1 * p.first_moment.data()[k] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * p.second_moment.data()[k] + (1.0 - cfg.beta2) * g * g;
            p.first_moment.data_mut()[k] = m;
            p.second_moment.data_mut()[k] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            let theta = p.value.data()[k];
            p.value.data_mut()[k] = theta - cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta);
        }
    }
}

/// Cosine annealing from `base` down to `floor` over `total` epochs.
pub fn cosine_lr(base: f64, floor: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (epoch.min(total) as f64) / total as f64;
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut s = ParamStore::new();
        let id = s.insert("w", Matrix::row_vector(vec![0.5, -1.5])).unwrap();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        for step in 1..=5 {
            adam_step(&mut s, &cfg, step);
        }
        assert_eq!(s.value(id).data(), &[0.5, -1.5]);
    }

    #[test]
    fn defaults() {
        let cfg = AdamConfig::default();
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.weight_decay, 0.0005);
        assert_eq!(cfg.beta1, 0.9);
    }

    #[test]
    fn unit_gradient_moves_by_lr() {
        let mut s = ParamStore::new();
        let id = s.insert("w", Matrix::scalar(2.0)).unwrap();
        s.param_mut(id).grad = Matrix::scalar(1.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut s, &cfg, 1);
        // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps)
        let expected = 2.0 - cfg.lr / (1.0 + cfg.eps);
        assert!((s.value(id).get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn subset_step_leaves_others_alone() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Matrix::scalar(1.0)).unwrap();
        let b = s.insert("b", Matrix::scalar(1.0)).unwrap();
        s.param_mut(a).grad = Matrix::scalar(1.0);
        s.param_mut(b).grad = Matrix::scalar(1.0);
        adam_step_for(&mut s, &[a], &AdamConfig::default(), 1);
        assert!(s.value(a).get(0, 0) < 1.0);
        assert_eq!(s.value(b).get(0, 0), 1.0);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1e-3, 1e-6, 0, 10), 1e-3);
        assert!((cosine_lr(1e-3, 1e-6, 10, 10) - 1e-6).abs() < 1e-18);
        let mid = cosine_lr(1e-3, 1e-6, 5, 10);
        assert!((mid - (1e-6 + 0.5 * (1e-3 - 1e-6))).abs() < 1e-15);
    }
}
