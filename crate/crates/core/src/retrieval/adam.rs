use super::model::ModelParams;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T> {
    pub first: ModelParams<T>,
    pub second: ModelParams<T>,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn zeros() -> Self {
        AdamMoments {
            first: ModelParams::zeros(),
            second: ModelParams::zeros(),
        }
    }
}

/// One bias-corrected Adam update. `step_index` counts from 1.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    moments: &mut AdamMoments<T>,
    grads: &ModelParams<T>,
    lr: f64,
    step_index: u64,
    cfg: &AdamConfig,
) {
    assert!(step_index >= 1, "Adam steps are numbered from 1");
    let t = step_index as i32;
    let correction1 = 1.0 - cfg.beta1.powi(t);
    let correction2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let step = T::of(lr / correction1);
    let inv_c2 = T::of(1.0 / correction2);
    let eps = T::of(cfg.eps);

    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(moments.first.tensors_mut())
        .zip(moments.second.tensors_mut())
        .zip(grads.tensors());
    for ((((_, p), (_, m)), (_, v)), (_, g)) in tensors {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + one_b1 * gi;
            v[i] = b2 * v[i] + one_b2 * gi * gi;
            p[i] -= step * m[i] / ((v[i] * inv_c2).sqrt() + eps);
        }
    }
}
