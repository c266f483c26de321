//! Stride-1 3D convolution and transposed convolution.
//!
//! Both maps share one geometry. With `s = +1` for convolution and `s = -1`
//! for the transposed direction, output element `o` reads input element
//! `o + s·(tap − pad)` for every kernel tap:
//!
//! ```text
//! out[o][co] = bias[co] + Σ_tap Σ_ci  x[o + s·(tap − pad)][ci] · w[tap][ci][co]
//! ```
//!
//! Every path accumulates a given output element as the bias followed by the
//! valid taps in `(td, th, tw)` order and then `ci` order, which is also the
//! order of [`super::reference`]. The optimized and reference forward passes
//! therefore agree bit for bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor5::{Element, Shape5, Tensor5};

/// Kernel weights laid out as `(d_k, k_h, k_w, c_in, c_out)` inside a
/// [`Tensor5`], plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel3D<T> {
    pub weights: Tensor5<T>,
    pub bias: Vec<T>,
}

impl<T: Element> Kernel3D<T> {
    pub fn new(weights: Tensor5<T>, bias: Vec<T>) -> Result<Self> {
        let c_out = weights.shape().c;
        if bias.len() != c_out {
            return Err(Error::geometry(
                "Kernel3D",
                format!(
                    "bias has {} entries, kernel has {c_out} outputs",
                    bias.len()
                ),
            ));
        }
        Ok(Kernel3D { weights, bias })
    }

    pub fn zeros(extent: [usize; 3], c_in: usize, c_out: usize) -> Result<Self> {
        let shape = Shape5::new(extent[0], extent[1], extent[2], c_in, c_out)?;
        Self::new(Tensor5::zeros(shape)?, vec![T::zero(); c_out])
    }

    /// Temporal, height and width extents.
    pub fn extent(&self) -> [usize; 3] {
        let s = self.weights.shape();
        [s.n, s.d, s.h]
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape().w
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape().c
    }

    /// The same taps with input and output channel roles swapped.
    pub fn swap_channels(&self) -> Self {
        let s = self.weights.shape();
        let [kd, kh, kw] = self.extent();
        let (ci, co) = (self.c_in(), self.c_out());
        let shape = Shape5::new(kd, kh, kw, co, ci).unwrap();
        let mut w = vec![T::zero(); s.len()];
        for tap in 0..kd * kh * kw {
            for i in 0..ci {
                for o in 0..co {
                    w[(tap * co + o) * ci + i] = self.weights.data()[(tap * ci + i) * co + o];
                }
            }
        }
        Kernel3D {
            weights: Tensor5::from_vec(shape, w).unwrap(),
            bias: vec![T::zero(); ci],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `⌊k/2⌋` on both sides of every axis.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    Forward,
    Transposed,
}

impl Direction {
    fn name(self) -> &'static str {
        match self {
            Direction::Forward => "conv3d",
            Direction::Transposed => "deconv3d",
        }
    }
}

/// Resolved extents and padding for one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub input: Shape5,
    pub output: Shape5,
    pub ext: [usize; 3],
    pub pad: [usize; 3],
    pub dir: Direction,
}

impl ConvGeom {
    pub fn new<T: Element>(
        input: Shape5,
        k: &Kernel3D<T>,
        padding: Padding,
        dir: Direction,
    ) -> Result<Self> {
        let op = dir.name();
        if input.c != k.c_in() {
            return Err(Error::ChannelMismatch {
                op,
                expected: k.c_in(),
                got: input.c,
            });
        }
        let ext = k.extent();
        let pad = match padding {
            Padding::Same => [ext[0] / 2, ext[1] / 2, ext[2] / 2],
            Padding::Valid => [0, 0, 0],
        };
        let in_ext = [input.d, input.h, input.w];
        let mut out = [0usize; 3];
        for a in 0..3 {
            let (i, k, p) = (in_ext[a], ext[a], pad[a]);
            out[a] = match dir {
                Direction::Forward => {
                    if i + 2 * p < k {
                        return Err(Error::geometry(
                            op,
                            format!(
                                "kernel extent {k} exceeds padded input extent {}",
                                i + 2 * p
                            ),
                        ));
                    }
                    i + 2 * p - k + 1
                }
                Direction::Transposed => {
                    if i + k < 1 + 2 * p {
                        return Err(Error::geometry(op, "padding exceeds output extent"));
                    }
                    i + k - 1 - 2 * p
                }
            };
        }
        let output = Shape5::new(input.n, out[0], out[1], out[2], k.c_out())?;
        Ok(ConvGeom {
            input,
            output,
            ext,
            pad,
            dir,
        })
    }

    /// Input coordinate read by output coordinate `o` through tap `t` on
    /// axis `a`, if it lies inside the input.
    #[inline]
    pub fn source(&self, a: usize, o: usize, t: usize) -> Option<usize> {
        let bound = [self.input.d, self.input.h, self.input.w][a];
        let v = match self.dir {
            Direction::Forward => (o + t).checked_sub(self.pad[a]),
            Direction::Transposed => (o + self.pad[a]).checked_sub(t),
        }?;
        (v < bound).then_some(v)
    }

    /// Output coordinate that reads input coordinate `i` through tap `t`.
    #[inline]
    pub fn sink(&self, a: usize, i: usize, t: usize) -> Option<usize> {
        let bound = [self.output.d, self.output.h, self.output.w][a];
        let v = match self.dir {
            Direction::Forward => (i + self.pad[a]).checked_sub(t),
            Direction::Transposed => (i + t).checked_sub(self.pad[a]),
        }?;
        (v < bound).then_some(v)
    }
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor5<T>,
    pub grad_w: Tensor5<T>,
    pub grad_b: Vec<T>,
}

pub fn conv3d_forward<T: Element>(
    x: &Tensor5<T>,
    k: &Kernel3D<T>,
    padding: Padding,
) -> Result<Tensor5<T>> {
    let g = ConvGeom::new(x.shape(), k, padding, Direction::Forward)?;
    correlate(x, k, &g)
}

pub fn conv3d_backward<T: Element>(
    x: &Tensor5<T>,
    k: &Kernel3D<T>,
    padding: Padding,
    grad_out: &Tensor5<T>,
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(x.shape(), k, padding, Direction::Forward)?;
    backward(x, k, &g, grad_out)
}

/// Transposed convolution. The kernel maps `c_in → c_out` in the transposed
/// direction, so this is the adjoint of [`conv3d_forward`] with
/// [`Kernel3D::swap_channels`] applied.
pub fn deconv3d_forward<T: Element>(
    x: &Tensor5<T>,
    k: &Kernel3D<T>,
    padding: Padding,
) -> Result<Tensor5<T>> {
    let g = ConvGeom::new(x.shape(), k, padding, Direction::Transposed)?;
    correlate(x, k, &g)
}

pub fn deconv3d_backward<T: Element>(
    x: &Tensor5<T>,
    k: &Kernel3D<T>,
    padding: Padding,
    grad_out: &Tensor5<T>,
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(x.shape(), k, padding, Direction::Transposed)?;
    backward(x, k, &g, grad_out)
}

/// Forward pass, one output row `(n, d, h)` per task. The inner loop is an
/// axpy over the contiguous output channels.
fn correlate<T: Element>(x: &Tensor5<T>, k: &Kernel3D<T>, g: &ConvGeom) -> Result<Tensor5<T>> {
    let (is, os) = (g.input, g.output);
    let [kd, kh, kw] = g.ext;
    let (ci, co) = (is.c, os.c);
    let xs = x.data();
    let ws = k.weights.data();
    let mut out = Tensor5::zeros(os)?;
    out.data_mut()
        .par_chunks_mut(os.w * co)
        .enumerate()
        .for_each(|(row, orow)| {
            let n = row / (os.d * os.h);
            let od = (row / os.h) % os.d;
            let oh = row % os.h;
            for ow in 0..os.w {
                let acc = &mut orow[ow * co..(ow + 1) * co];
                acc.copy_from_slice(&k.bias);
                for td in 0..kd {
                    let Some(id) = g.source(0, od, td) else {
                        continue;
                    };
                    for th in 0..kh {
                        let Some(ih) = g.source(1, oh, th) else {
                            continue;
                        };
                        for tw in 0..kw {
                            let Some(iw) = g.source(2, ow, tw) else {
                                continue;
                            };
                            let xo = is.offset(n, id, ih, iw, 0);
                            let wo = ((td * kh + th) * kw + tw) * ci * co;
                            let taps = &ws[wo..wo + ci * co];
                            for (&xv, wrow) in xs[xo..xo + ci].iter().zip(taps.chunks_exact(co)) {
                                for (a, &wv) in acc.iter_mut().zip(wrow) {
                                    *a = *a + xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

fn backward<T: Element>(
    x: &Tensor5<T>,
    k: &Kernel3D<T>,
    g: &ConvGeom,
    grad_out: &Tensor5<T>,
) -> Result<ConvGrads<T>> {
    if grad_out.shape() != g.output {
        return Err(Error::ShapeMismatch {
            op: g.dir.name(),
            left: g.output,
            right: grad_out.shape(),
        });
    }
    let (is, os) = (g.input, g.output);
    let [kd, kh, kw] = g.ext;
    let (ci, co) = (is.c, os.c);
    let xs = x.data();
    let ws = k.weights.data();
    let gs = grad_out.data();

    // grad_x: gather every output element that read this input element.
    let mut grad_x = Tensor5::zeros(is)?;
    grad_x
        .data_mut()
        .par_chunks_mut(is.w * ci)
        .enumerate()
        .for_each(|(row, xrow)| {
            let n = row / (is.d * is.h);
            let id = (row / is.h) % is.d;
            let ih = row % is.h;
            for iw in 0..is.w {
                let acc = &mut xrow[iw * ci..(iw + 1) * ci];
                for td in 0..kd {
                    let Some(od) = g.sink(0, id, td) else {
                        continue;
                    };
                    for th in 0..kh {
                        let Some(oh) = g.sink(1, ih, th) else {
                            continue;
                        };
                        for tw in 0..kw {
                            let Some(ow) = g.sink(2, iw, tw) else {
                                continue;
                            };
                            let go = os.offset(n, od, oh, ow, 0);
                            let grow = &gs[go..go + co];
                            let wo = ((td * kh + th) * kw + tw) * ci * co;
                            let taps = &ws[wo..wo + ci * co];
                            for (a, wrow) in acc.iter_mut().zip(taps.chunks_exact(co)) {
                                let dot = grow
                                    .iter()
                                    .zip(wrow)
                                    .fold(T::zero(), |s, (&gv, &wv)| s + gv * wv);
                                *a = *a + dot;
                            }
                        }
                    }
                }
            }
        });

    // grad_w: one (ci × co) slab per tap, accumulated over output positions.
    let mut grad_w = Tensor5::zeros(k.weights.shape())?;
    grad_w
        .data_mut()
        .par_chunks_mut(ci * co)
        .enumerate()
        .for_each(|(tap, slab)| {
            let td = tap / (kh * kw);
            let th = (tap / kw) % kh;
            let tw = tap % kw;
            for n in 0..os.n {
                for od in 0..os.d {
                    let Some(id) = g.source(0, od, td) else {
                        continue;
                    };
                    for oh in 0..os.h {
                        let Some(ih) = g.source(1, oh, th) else {
                            continue;
                        };
                        for ow in 0..os.w {
                            let Some(iw) = g.source(2, ow, tw) else {
                                continue;
                            };
                            let xo = is.offset(n, id, ih, iw, 0);
                            let go = os.offset(n, od, oh, ow, 0);
                            let grow = &gs[go..go + co];
                            for (&xv, srow) in xs[xo..xo + ci].iter().zip(slab.chunks_exact_mut(co))
                            {
                                for (s, &gv) in srow.iter_mut().zip(grow) {
                                    *s = *s + xv * gv;
                                }
                            }
                        }
                    }
                }
            }
        });

    let mut grad_b = vec![T::zero(); co];
    for grow in gs.chunks_exact(co) {
        for (b, &gv) in grad_b.iter_mut().zip(grow) {
            *b = *b + gv;
        }
    }

    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}
