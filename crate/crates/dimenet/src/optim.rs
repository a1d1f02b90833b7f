//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};
use crate::params::{is_trainable, Gradients, ModelParams};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.dims())).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }
}

/// One update of every trainable tensor that has a gradient. Tensors
/// without a gradient still see their moments decay.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.m.len() != params.len() || grads.grads.len() != params.len() {
        return Err(shape("optimizer state or gradients do not match the parameters"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(cfg.beta1), T::from_f64_lossy(cfg.beta2));
    let (one, eps) = (T::one(), T::from_f64_lossy(cfg.eps));
    let step = T::from_f64_lossy(lr / c1);
    let inv_c2 = T::from_f64_lossy(1.0 / c2);
    for idx in 0..params.len() {
        if !is_trainable(params.name(idx)) {
            continue;
        }
        let p = params.by_index_mut(idx).data_mut();
        let (m, v) = (state.m[idx].data_mut(), state.v[idx].data_mut());
        match grads.get(idx) {
            Some(g) => {
                for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
                }
            }
            None => {
                for ((p, m), v) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m;
                    *v = b2 * *v;
                    *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
