//! Per-channel batch normalization over `(n, d, h, w)`.
//!
//! Statistics use the population variance (divisor `N`) in both modes.
//! Channel sums are accumulated in `f64` in offset order.

use crate::error::{Error, Result};
use crate::tensor5::{Element, Tensor5};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BNState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Element> BNState<T> {
    pub fn new(channels: usize) -> Self {
        BNState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::from_f64_lossy(BN_MOMENTUM),
            epsilon: T::from_f64_lossy(BN_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor5<T>) -> Result<()> {
        if x.shape().c != self.channels() {
            return Err(Error::ChannelMismatch {
                op: "batchnorm",
                expected: self.channels(),
                got: x.shape().c,
            });
        }
        Ok(())
    }
}

/// What the backward pass needs from a train-mode forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache<T> {
    pub xhat: Tensor5<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads<T> {
    pub grad_x: Tensor5<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
}

fn channel_stats<T: Element>(x: &Tensor5<T>) -> (Vec<f64>, Vec<f64>) {
    let c = x.shape().c;
    let count = (x.len() / c) as f64;
    let mut mean = vec![0.0f64; c];
    for px in x.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v.to_f64_lossless();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; c];
    for px in x.data().chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
            let d = v.to_f64_lossless() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    (mean, var)
}

fn normalize<T: Element>(x: &Tensor5<T>, mean: &[T], inv_std: &[T]) -> Tensor5<T> {
    let c = x.shape().c;
    let mut out = x.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for ((v, &m), &s) in px.iter_mut().zip(mean).zip(inv_std) {
            *v = (*v - m) * s;
        }
    }
    out
}

fn affine<T: Element>(xhat: &Tensor5<T>, gamma: &[T], beta: &[T]) -> Tensor5<T> {
    let c = xhat.shape().c;
    let mut out = xhat.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for ((v, &g), &b) in px.iter_mut().zip(gamma).zip(beta) {
            *v = *v * g + b;
        }
    }
    out
}

/// Normalizes with batch statistics and folds them into the running
/// statistics: `running ← momentum·running + (1 − momentum)·batch`.
pub fn batchnorm_forward_train<T: Element>(
    x: &Tensor5<T>,
    state: &mut BNState<T>,
) -> Result<(Tensor5<T>, BnCache<T>)> {
    state.check(x)?;
    let (mean, var) = channel_stats(x);
    let eps = state.epsilon.to_f64_lossless();
    let batch_mean: Vec<T> = mean.iter().map(|&m| T::from_f64_lossy(m)).collect();
    let batch_var: Vec<T> = var.iter().map(|&v| T::from_f64_lossy(v)).collect();
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v + eps).sqrt()))
        .collect();
    let xhat = normalize(x, &batch_mean, &inv_std);
    let y = affine(&xhat, &state.gamma, &state.beta);

    let m = state.momentum;
    for (r, &b) in state.running_mean.iter_mut().zip(&batch_mean) {
        *r = m * *r + (T::one() - m) * b;
    }
    for (r, &b) in state.running_var.iter_mut().zip(&batch_var) {
        *r = m * *r + (T::one() - m) * b;
    }
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            batch_mean,
            batch_var,
        },
    ))
}

pub fn batchnorm_forward_infer<T: Element>(
    x: &Tensor5<T>,
    state: &BNState<T>,
) -> Result<Tensor5<T>> {
    state.check(x)?;
    let eps = state.epsilon;
    let inv_std: Vec<T> = state
        .running_var
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    let xhat = normalize(x, &state.running_mean, &inv_std);
    Ok(affine(&xhat, &state.gamma, &state.beta))
}

/// Mode-dispatching wrapper; only train mode touches `state`.
pub fn batchnorm_forward<T: Element>(
    x: &Tensor5<T>,
    state: &mut BNState<T>,
    mode: Mode,
) -> Result<(Tensor5<T>, Option<BnCache<T>>)> {
    match mode {
        Mode::Train => batchnorm_forward_train(x, state).map(|(y, c)| (y, Some(c))),
        Mode::Infer => batchnorm_forward_infer(x, state).map(|y| (y, None)),
    }
}

/// Backward through a train-mode normalization:
/// `dx = γ·σ⁻¹·(g − mean(g) − x̂·mean(g·x̂))`.
pub fn batchnorm_backward<T: Element>(
    cache: &BnCache<T>,
    gamma: &[T],
    grad_out: &Tensor5<T>,
) -> Result<BnGrads<T>> {
    let shape = cache.xhat.shape();
    if grad_out.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "batchnorm_backward",
            left: shape,
            right: grad_out.shape(),
        });
    }
    if gamma.len() != shape.c {
        return Err(Error::ChannelMismatch {
            op: "batchnorm_backward",
            expected: shape.c,
            got: gamma.len(),
        });
    }
    let c = shape.c;
    let count = (shape.len() / c) as f64;
    let mut sum_g = vec![0.0f64; c];
    let mut sum_gx = vec![0.0f64; c];
    for (gp, xp) in grad_out
        .data()
        .chunks_exact(c)
        .zip(cache.xhat.data().chunks_exact(c))
    {
        for ch in 0..c {
            let g = gp[ch].to_f64_lossless();
            sum_g[ch] += g;
            sum_gx[ch] += g * xp[ch].to_f64_lossless();
        }
    }
    let mean_g: Vec<T> = sum_g
        .iter()
        .map(|&s| T::from_f64_lossy(s / count))
        .collect();
    let mean_gx: Vec<T> = sum_gx
        .iter()
        .map(|&s| T::from_f64_lossy(s / count))
        .collect();
    let scale: Vec<T> = gamma
        .iter()
        .zip(&cache.inv_std)
        .map(|(&g, &s)| g * s)
        .collect();

    let mut grad_x = grad_out.clone();
    for (gp, xp) in grad_x
        .data_mut()
        .chunks_exact_mut(c)
        .zip(cache.xhat.data().chunks_exact(c))
    {
        for ch in 0..c {
            gp[ch] = scale[ch] * (gp[ch] - mean_g[ch] - xp[ch] * mean_gx[ch]);
        }
    }
    Ok(BnGrads {
        grad_x,
        grad_gamma: sum_gx.iter().map(|&s| T::from_f64_lossy(s)).collect(),
        grad_beta: sum_g.iter().map(|&s| T::from_f64_lossy(s)).collect(),
    })
}
