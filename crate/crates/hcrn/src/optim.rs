//! Adaptive first-order optimizer with bias-corrected moments, plus global
//! gradient-norm clipping.

use std::collections::BTreeMap;

use crate::params::{GradMap, ModelParams};

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update; `grads` must cover a subset of `params` by name.
    pub fn step(&mut self, params: &mut ModelParams, grads: &GradMap, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, grad) in grads {
            let Some(param) = params.get_mut(name) else {
                continue;
            };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

/// Scale gradients so the global L2 norm is at most `max_norm`; returns
/// true when clipping fired.
pub fn clip_global_norm(grads: &mut GradMap, max_norm: f64) -> bool {
    let mut sq = 0.0;
    for g in grads.values() {
        for &x in g {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return false;
    }
    let scale = max_norm / norm;
    for g in grads.values_mut() {
        for x in g.iter_mut() {
            *x *= scale;
        }
    }
    true
}

/// Elementwise accumulate `delta` into `acc` (missing keys are inserted).
pub fn accumulate(acc: &mut GradMap, delta: &GradMap) {
    for (name, g) in delta {
        match acc.get_mut(name) {
            Some(existing) => {
                for (a, b) in existing.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => {
                acc.insert(name.clone(), g.clone());
            }
        }
    }
}

/// Scale every gradient in place.
pub fn scale(grads: &mut GradMap, factor: f64) {
    for g in grads.values_mut() {
        for x in g.iter_mut() {
            *x *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut params = ModelParams::new();
        params.insert("x", Tensor::vector(vec![5.0, -3.0]));
        let mut opt = Adam::new();
        for _ in 0..2000 {
            let x = &params.get("x").unwrap().data;
            let mut grads = GradMap::new();
            grads.insert("x".into(), vec![2.0 * x[0], 2.0 * x[1]]);
            opt.step(&mut params, &grads, 1e-2);
        }
        let x = &params.get("x").unwrap().data;
        assert!(x[0].abs() < 1e-3 && x[1].abs() < 1e-3, "got {x:?}");
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut grads = GradMap::new();
        grads.insert("a".into(), vec![3.0, 4.0]); // norm 5
        assert!(clip_global_norm(&mut grads, 1.0));
        let g = &grads["a"];
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(!clip_global_norm(&mut grads, 1.0));
    }

    #[test]
    fn accumulate_and_scale_average_gradients() {
        let mut acc = GradMap::new();
        let mut d1 = GradMap::new();
        d1.insert("w".into(), vec![1.0, 2.0]);
        let mut d2 = GradMap::new();
        d2.insert("w".into(), vec![3.0, 4.0]);
        accumulate(&mut acc, &d1);
        accumulate(&mut acc, &d2);
        scale(&mut acc, 0.5);
        assert_eq!(acc["w"], vec![2.0, 3.0]);
    }
}
