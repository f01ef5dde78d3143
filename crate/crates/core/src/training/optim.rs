//! AdamW, the learning-rate schedule and gradient clipping.

use serde::{Deserialize, Serialize};

use crate::model::ParamStore;
use crate::scalar::Scalar;

/// Linear warmup from 0 to `peak` over `warmup` steps, then half-cosine
/// decay reaching 0 at step `total - 1`.
pub fn lr_at(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warmup);
    if span == 0 {
        return peak;
    }
    let t = ((step - warmup) as f64 / span as f64).min(1.0);
    peak * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

impl AdamW {
    /// Decoupled decay `p -= lr * wd * p`, then the bias-corrected Adam
    /// update. Parameters without a gradient only decay.
    pub fn step<T: Scalar>(&self, params: &mut ParamStore<T>, state: &mut AdamState<T>, lr: f64) {
        state.step += 1;
        let t = state.step as i32;
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (lr_t, eps) = (T::of(lr), T::of(self.eps));
        let decay = T::of(lr * self.weight_decay);
        for (k, (_, p)) in params.iter_mut().enumerate() {
            let grad = p.grad().map(<[T]>::to_vec);
            let (m, v) = (&mut state.m[k], &mut state.v[k]);
            let data = p.data_mut();
            for (i, x) in data.iter_mut().enumerate() {
                *x -= decay * *x;
                let g = grad.as_ref().map_or(T::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *x -= lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<T: Scalar>(params: &ParamStore<T>) -> f64 {
    params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|g| g.as_f64().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(params: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for (_, p) in params.iter_mut() {
            if let Some(mut g) = p.take_grad() {
                g.iter_mut().for_each(|x| *x *= s);
                p.accumulate_grad(&g);
            }
        }
    }
    norm
}
