//! Mini-batch squared-error loss and the Adam optimizer.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::net::{ModelParams, ParamGrads};
use crate::tensor5::{Element, Tensor5};

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub loss: T,
    pub grad_s: Tensor5<T>,
}

/// `L = 1/(k·h·w) · Σ (S − G)²` over a `(k, 1, h, w, 1)` batch, with
/// `∂L/∂S = 2(S − G)/(k·h·w)`. Any other leading shape is normalized by its
/// full element count divided by the same factor.
pub fn mse_loss<T: Element>(s: &Tensor5<T>, g: &Tensor5<T>) -> Result<LossValue<T>> {
    if s.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse_loss",
            left: s.shape(),
            right: g.shape(),
        });
    }
    let count = T::from_usize(s.len()).unwrap();
    let diff = s.sub(g)?;
    let loss = diff.data().iter().fold(T::zero(), |acc, &d| acc + d * d) / count;
    let two = T::one() + T::one();
    let grad_s = diff.scale(two / count);
    Ok(LossValue { loss, grad_s })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// First and second moment estimates per named parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: IndexMap<String, Moments<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    /// One Adam update over aligned `(name, buffer)` lists. Moments for a
    /// name are created zeroed on first sight; everything is validated
    /// before any buffer is written.
    pub fn step_buffers(
        &mut self,
        params: &mut [(String, &mut [T])],
        grads: &[(String, &[T])],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Misaligned(format!(
                "{} parameter buffers but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for ((pn, p), (gn, g)) in params.iter().zip(grads) {
            if pn != gn || p.len() != g.len() {
                return Err(Error::Misaligned(format!(
                    "parameter {pn} ({}) paired with gradient {gn} ({})",
                    p.len(),
                    g.len()
                )));
            }
            if let Some(mo) = self.moments.get(pn) {
                if mo.m.len() != p.len() || mo.v.len() != p.len() {
                    return Err(Error::Misaligned(format!(
                        "moments of {pn} have wrong length"
                    )));
                }
            }
        }
        if !self.moments.is_empty() && self.moments.len() != params.len() {
            return Err(Error::Misaligned(format!(
                "state tracks {} buffers, step received {}",
                self.moments.len(),
                params.len()
            )));
        }

        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let lr = T::from_f64_lossy(c.learning_rate);
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let eps = T::from_f64_lossy(c.epsilon);
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);
        for ((name, p), (_, g)) in params.iter_mut().zip(grads) {
            let mo = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![T::zero(); g.len()],
                v: vec![T::zero(); g.len()],
            });
            for i in 0..g.len() {
                let gi = g[i];
                mo.m[i] = b1 * mo.m[i] + (T::one() - b1) * gi;
                mo.v[i] = b2 * mo.v[i] + (T::one() - b2) * gi * gi;
                let m_hat = mo.m[i] / bias1;
                let v_hat = mo.v[i] / bias2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ParamGrads<T>) -> Result<()> {
        let mut p = params.learnables_mut();
        let g = grads.learnables();
        self.step_buffers(&mut p, &g)
    }
}
