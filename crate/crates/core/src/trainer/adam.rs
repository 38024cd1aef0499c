use crate::error::{FameError, Result};
use crate::model::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState { step: 0, m: zeros(), v: zeros() }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::cst(max_norm / norm);
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
    }
    norm
}

/// One bias-corrected Adam update. A non-finite gradient aborts before any
/// parameter changes and names the offending parameter.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(FameError::Contract(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (name, (g, p)) in params.names().iter().zip(grads.iter().zip(params.tensors())) {
        if g.shape() != p.shape() {
            return Err(FameError::shape("adam", format!("{name}: gradient {} vs parameter {}", g.shape(), p.shape())));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(FameError::numeric("adam", format!("non-finite gradient in `{name}` at element {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::cst(cfg.beta1), T::cst(cfg.beta2));
    let (ob1, ob2) = (T::cst(1.0 - cfg.beta1), T::cst(1.0 - cfg.beta2));
    let step_size = T::cst(cfg.lr / bc1);
    let inv_sqrt_bc2 = T::cst(1.0 / bc2.sqrt());
    let eps = T::cst(cfg.eps);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v, g) = (state.m[i].data_mut(), state.v[i].data_mut(), grads[i].data());
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + ob1 * g[j];
            v[j] = b2 * v[j] + ob2 * g[j] * g[j];
            *w -= step_size * m[j] / (v[j].sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}
