//! Adam and global gradient-norm capping over [`PPNParams`].

use crate::model::PPNParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: PPNParams,
    pub v: PPNParams,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, like: &PPNParams) -> Self {
        Self {
            config,
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }

    /// One bias-corrected update of `params` against `grads`.
    pub fn update(&mut self, params: &mut PPNParams, grads: &PPNParams) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            let p = p.data_mut();
            let m = m.data_mut();
            let v = v.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `cap`; returns the
/// norm before capping.
pub fn clip_grad_norm(grads: &mut PPNParams, cap: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > cap && norm.is_finite() {
        let s = cap / norm;
        for t in grads.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
