//! Central finite-difference checks of every backward pass at `f64`.
//!
//! Each op is reduced to a scalar `f(x) = Σ r ⊙ op(x)` with a random
//! weighting `r`, so that `op_backward(grad_out = r)` is the analytic
//! gradient of `f`. The end-to-end check runs the micro network under the
//! training loss and samples parameters from every learnable buffer.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::net::Network;
pub use crate::ops::ConvGrads;
use crate::ops::{self, Kernel3D, Padding, PoolSpec};
use crate::optim::mse_loss;
use crate::tensor5::{Shape5, Tensor5};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const DENOM_FLOOR: f64 = 1e-6;
/// ReLU inputs closer than this to zero are moved away before checking.
pub const KINK_MARGIN: f64 = 1e-3;
pub const MODEL_SAMPLES: usize = 50;

pub type ConvBackwardFn =
    fn(&Tensor5<f64>, &Kernel3D<f64>, Padding, &Tensor5<f64>) -> Result<ConvGrads<f64>>;

/// Backward implementations under test. Swapping one out lets a test feed
/// the harness a known-bad gradient.
#[derive(Clone, Copy)]
pub struct Backwards {
    pub conv3d: ConvBackwardFn,
    pub deconv3d: ConvBackwardFn,
}

impl Default for Backwards {
    fn default() -> Self {
        Backwards {
            conv3d: ops::conv3d_backward,
            deconv3d: ops::deconv3d_backward,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpResult {
    pub op: &'static str,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl OpResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE && self.checked > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub results: Vec<OpResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(OpResult::passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.results
            .iter()
            .filter(|r| !r.passed())
            .map(|r| r.op)
            .collect()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(
                f,
                "{:<12} max_rel_err={:.3e} checked={} {}",
                r.op,
                r.max_rel_err,
                r.checked,
                if r.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Accumulates the worst relative error over checked coordinates.
#[derive(Default)]
struct Tally {
    max: f64,
    checked: usize,
}

impl Tally {
    /// Compares `analytic[i]` with the central difference of `f` around
    /// `point` for each `i` in `indices`. `f` returns `None` when the
    /// perturbed point leaves the smooth piece, and that index is skipped.
    fn probe<F>(
        &mut self,
        point: &[f64],
        analytic: &[f64],
        indices: impl IntoIterator<Item = usize>,
        mut f: F,
    ) where
        F: FnMut(&[f64]) -> Option<f64>,
    {
        let mut p = point.to_vec();
        for i in indices {
            let orig = p[i];
            p[i] = orig + STEP;
            let plus = f(&p);
            p[i] = orig - STEP;
            let minus = f(&p);
            p[i] = orig;
            if let (Some(a), Some(b)) = (plus, minus) {
                let numeric = (a - b) / (2.0 * STEP);
                self.max = self.max.max(rel_err(analytic[i], numeric));
                self.checked += 1;
            }
        }
    }

    fn merge(&mut self, other: Tally) {
        self.max = self.max.max(other.max);
        self.checked += other.checked;
    }

    fn finish(self, op: &'static str) -> OpResult {
        OpResult {
            op,
            max_rel_err: self.max,
            checked: self.checked,
        }
    }
}

fn weighted(r: &Tensor5<f64>, y: &Tensor5<f64>) -> f64 {
    r.dot(y).expect("weighting matches output shape")
}

fn normal(shape: Shape5, std: f64, seed: u64) -> Result<Tensor5<f64>> {
    Tensor5::rng_fill_normal(shape, 0.0, std, seed)
}

fn with_data(like: &Tensor5<f64>, data: &[f64]) -> Tensor5<f64> {
    Tensor5::from_vec(like.shape(), data.to_vec()).expect("same length")
}

fn all(n: usize) -> std::ops::Range<usize> {
    0..n
}

type ForwardFn = fn(&Tensor5<f64>, &Kernel3D<f64>, Padding) -> Result<Tensor5<f64>>;

fn check_conv_like(
    forward: ForwardFn,
    backward: ConvBackwardFn,
    seed: u64,
    op: &'static str,
) -> Result<OpResult> {
    let mut tally = Tally::default();
    for (j, padding) in [Padding::Same, Padding::Valid].into_iter().enumerate() {
        let s = seed.wrapping_add(10 * j as u64);
        let x = normal(Shape5::new(2, 3, 4, 4, 2)?, 1.0, s)?;
        let w = normal(Shape5::new(3, 3, 3, 2, 3)?, 0.3, s + 1)?;
        let b = normal(Shape5::new(1, 1, 1, 1, 3)?, 0.3, s + 2)?.into_vec();
        let k = Kernel3D::new(w, b)?;
        let y = forward(&x, &k, padding)?;
        let r = normal(y.shape(), 1.0, s + 3)?;
        let g = backward(&x, &k, padding, &r)?;

        let mut t = Tally::default();
        t.probe(x.data(), g.grad_x.data(), all(x.len()), |p| {
            Some(weighted(&r, &forward(&with_data(&x, p), &k, padding).ok()?))
        });
        t.probe(
            k.weights.data(),
            g.grad_w.data(),
            all(k.weights.len()),
            |p| {
                let kk = Kernel3D::new(with_data(&k.weights, p), k.bias.clone()).ok()?;
                Some(weighted(&r, &forward(&x, &kk, padding).ok()?))
            },
        );
        t.probe(&k.bias, &g.grad_b, all(k.bias.len()), |p| {
            let kk = Kernel3D::new(k.weights.clone(), p.to_vec()).ok()?;
            Some(weighted(&r, &forward(&x, &kk, padding).ok()?))
        });
        tally.merge(t);
    }
    Ok(tally.finish(op))
}

fn check_maxpool(seed: u64) -> Result<OpResult> {
    let x = normal(Shape5::new(2, 3, 5, 4, 2)?, 1.0, seed)?;
    let spec = PoolSpec::new([2, 2, 2], true)?;
    let pooled = ops::maxpool3d_forward(&x, &spec)?;
    let r = normal(pooled.values.shape(), 1.0, seed + 1)?;
    let g = ops::maxpool3d_backward(&pooled, &r)?;
    let mut t = Tally::default();
    t.probe(x.data(), g.data(), all(x.len()), |p| {
        let out = ops::maxpool3d_forward(&with_data(&x, p), &spec).ok()?;
        (out.argmax == pooled.argmax).then(|| weighted(&r, &out.values))
    });
    Ok(t.finish("maxpool3d"))
}

fn check_unpool(seed: u64) -> Result<OpResult> {
    let x = normal(Shape5::new(2, 1, 3, 3, 2)?, 1.0, seed)?;
    let f = [1, 2, 2];
    let y = ops::unpool3d_forward(&x, f)?;
    let r = normal(y.shape(), 1.0, seed + 1)?;
    let g = ops::unpool3d_backward(&r, x.shape(), f)?;
    let mut t = Tally::default();
    t.probe(x.data(), g.data(), all(x.len()), |p| {
        Some(weighted(
            &r,
            &ops::unpool3d_forward(&with_data(&x, p), f).ok()?,
        ))
    });
    Ok(t.finish("unpool3d"))
}

fn check_batchnorm(seed: u64) -> Result<OpResult> {
    let x = normal(Shape5::new(2, 2, 3, 3, 3)?, 2.0, seed)?;
    let mut state = ops::BNState::new(3);
    state.gamma = vec![0.5, 1.5, -1.0];
    state.beta = vec![0.1, -0.2, 0.3];
    let base = state.clone();
    let (y, cache) = ops::batchnorm_forward_train(&x, &mut state)?;
    let r = normal(y.shape(), 1.0, seed + 1)?;
    let g = ops::batchnorm_backward(&cache, &base.gamma, &r)?;

    let eval = |x: &Tensor5<f64>, st: &ops::BNState<f64>| -> Option<f64> {
        let mut st = st.clone();
        Some(weighted(
            &r,
            &ops::batchnorm_forward_train(x, &mut st).ok()?.0,
        ))
    };
    let mut t = Tally::default();
    t.probe(x.data(), g.grad_x.data(), all(x.len()), |p| {
        eval(&with_data(&x, p), &base)
    });
    t.probe(&base.gamma, &g.grad_gamma, all(3), |p| {
        eval(
            &x,
            &ops::BNState {
                gamma: p.to_vec(),
                ..base.clone()
            },
        )
    });
    t.probe(&base.beta, &g.grad_beta, all(3), |p| {
        eval(
            &x,
            &ops::BNState {
                beta: p.to_vec(),
                ..base.clone()
            },
        )
    });
    Ok(t.finish("batchnorm"))
}

fn check_relu(seed: u64) -> Result<OpResult> {
    let x = normal(Shape5::new(1, 2, 3, 3, 2)?, 1.0, seed)?.map_unary(|v| {
        if v.abs() < KINK_MARGIN {
            v.signum() * (KINK_MARGIN + v.abs())
        } else {
            v
        }
    });
    let y = ops::relu(&x);
    let r = normal(y.shape(), 1.0, seed + 1)?;
    let g = ops::relu_backward(&y, &r)?;
    let mut t = Tally::default();
    t.probe(x.data(), g.data(), all(x.len()), |p| {
        Some(weighted(&r, &ops::relu(&with_data(&x, p))))
    });
    Ok(t.finish("relu"))
}

fn check_sigmoid(seed: u64) -> Result<OpResult> {
    let x = normal(Shape5::new(1, 2, 3, 3, 2)?, 2.0, seed)?;
    let y = ops::sigmoid(&x);
    let r = normal(y.shape(), 1.0, seed + 1)?;
    let g = ops::sigmoid_backward(&y, &r)?;
    let mut t = Tally::default();
    t.probe(x.data(), g.data(), all(x.len()), |p| {
        Some(weighted(&r, &ops::sigmoid(&with_data(&x, p))))
    });
    Ok(t.finish("sigmoid"))
}

fn check_mse(seed: u64) -> Result<OpResult> {
    let shape = Shape5::new(2, 1, 4, 4, 1)?;
    let s = normal(shape, 0.3, seed)?.map_unary(|v| v + 0.5);
    let gt = normal(shape, 0.3, seed + 1)?.map_unary(|v| v + 0.5);
    let l = mse_loss(&s, &gt)?;
    let mut t = Tally::default();
    t.probe(s.data(), l.grad_s.data(), all(s.len()), |p| {
        Some(mse_loss(&with_data(&s, p), &gt).ok()?.loss)
    });
    Ok(t.finish("mse_loss"))
}

/// End-to-end check on the micro preset with a batch of two 8×8 clips.
fn check_model(seed: u64) -> Result<OpResult> {
    let net = Network::from_name("micro")?;
    let params = net.init_params::<f64>(seed)?;
    let x = Tensor5::<f64>::rng_fill_normal(Shape5::new(2, 3, 8, 8, 3)?, 0.5, 0.25, seed + 1)?;
    let gt = Tensor5::<f64>::rng_fill_normal(Shape5::new(2, 1, 8, 8, 1)?, 0.5, 0.25, seed + 2)?
        .map_unary(|v| v.clamp(0.0, 1.0));

    let run = |p: &crate::net::ModelParams<f64>| -> Result<(f64, Vec<usize>, crate::net::ParamGrads<f64>)> {
        let mut p = p.clone();
        let (s, trace) = net.forward_train(&mut p, &x)?;
        let l = mse_loss(&s, &gt)?;
        let grads = net.backward(&p, &trace, &l.grad_s)?;
        Ok((l.loss, trace.switch_pattern(), grads))
    };
    let (_, pattern, grads) = run(&params)?;

    let mut flat_params = Vec::new();
    let mut flat_grads = Vec::new();
    let mut scratch = params.clone();
    let buffers: Vec<(String, Vec<f64>)> = scratch
        .learnables_mut()
        .into_iter()
        .map(|(n, b)| (n, b.to_vec()))
        .collect();
    for ((_, p), (_, g)) in buffers.iter().zip(grads.learnables()) {
        flat_params.extend_from_slice(p);
        flat_grads.extend_from_slice(g);
    }
    let rebuild = |flat: &[f64]| {
        let mut p = params.clone();
        let mut at = 0;
        for (_, buf) in p.learnables_mut() {
            buf.copy_from_slice(&flat[at..at + buf.len()]);
            at += buf.len();
        }
        p
    };

    // One parameter from each buffer first, then uniform draws.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let mut indices = Vec::new();
    let mut at = 0;
    for (_, b) in &buffers {
        indices.push(at + rng.random_range(0..b.len()));
        at += b.len();
    }
    while indices.len() < 4 * MODEL_SAMPLES {
        indices.push(rng.random_range(0..flat_params.len()));
    }

    let mut t = Tally::default();
    for i in indices {
        if t.checked == MODEL_SAMPLES {
            break;
        }
        t.probe(&flat_params, &flat_grads, [i], |p| {
            let (loss, pat, _) = run(&rebuild(p)).ok()?;
            (pat == pattern).then_some(loss)
        });
    }
    Ok(t.finish("micro_model"))
}

/// Runs every op check and the end-to-end check.
pub fn run(seed: u64, backwards: Backwards) -> Result<Report> {
    let results = vec![
        check_conv_like(ops::conv3d_forward, backwards.conv3d, seed, "conv3d")?,
        check_conv_like(
            ops::deconv3d_forward,
            backwards.deconv3d,
            seed + 100,
            "deconv3d",
        )?,
        check_maxpool(seed + 200)?,
        check_unpool(seed + 300)?,
        check_batchnorm(seed + 400)?,
        check_relu(seed + 500)?,
        check_sigmoid(seed + 600)?,
        check_mse(seed + 700)?,
        check_model(seed + 800)?,
    ];
    Ok(Report { results })
}
