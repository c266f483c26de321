//! Naive nested-loop convolutions, kept as the oracle for the optimized
//! kernels in [`super::conv`].
//!
//! The forward passes evaluate each output element independently in the
//! canonical accumulation order and must match the optimized path exactly.
//! The backward passes scatter each output gradient through every tap it
//! touched, which is the chain rule applied literally.

use crate::error::{Error, Result};
use crate::ops::conv::{ConvGeom, ConvGrads, Direction, Kernel3D, Padding};
use crate::tensor5::{Element, Tensor5};

pub fn conv3d_forward<T: Element>(
    x: &Tensor5<T>,
    k: &Kernel3D<T>,
    padding: Padding,
) -> Result<Tensor5<T>> {
    let g = ConvGeom::new(x.shape(), k, padding, Direction::Forward)?;
    forward(x, k, &g)
}

pub fn deconv3d_forward<T: Element>(
    x: &Tensor5<T>,
    k: &Kernel3D<T>,
    padding: Padding,
) -> Result<Tensor5<T>> {
    let g = ConvGeom::new(x.shape(), k, padding, Direction::Transposed)?;
    forward(x, k, &g)
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

pub fn deconv3d_backward<T: Element>(
    x: &Tensor5<T>,
    k: &Kernel3D<T>,
    padding: Padding,
    grad_out: &Tensor5<T>,
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(x.shape(), k, padding, Direction::Transposed)?;
    backward(x, k, &g, grad_out)
}

fn forward<T: Element>(x: &Tensor5<T>, k: &Kernel3D<T>, g: &ConvGeom) -> Result<Tensor5<T>> {
    let os = g.output;
    let [kd, kh, kw] = g.ext;
    let mut out = Tensor5::zeros(os)?;
    #[allow(clippy::needless_range_loop)]
    for n in 0..os.n {
        for od in 0..os.d {
            for oh in 0..os.h {
                for ow in 0..os.w {
                    for co in 0..os.c {
                        let mut acc = k.bias[co];
                        for td in 0..kd {
                            for th in 0..kh {
                                for tw in 0..kw {
                                    let (Some(id), Some(ih), Some(iw)) = (
                                        g.source(0, od, td),
                                        g.source(1, oh, th),
                                        g.source(2, ow, tw),
                                    ) else {
                                        continue;
                                    };
                                    for ci in 0..g.input.c {
                                        acc = acc
                                            + x.get(n, id, ih, iw, ci)
                                                * k.weights.get(td, th, tw, ci, co);
                                    }
                                }
                            }
                        }
                        out.set(n, od, oh, ow, co, acc);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn backward<T: Element>(
    x: &Tensor5<T>,
    k: &Kernel3D<T>,
    g: &ConvGeom,
    grad_out: &Tensor5<T>,
) -> Result<ConvGrads<T>> {
    let os = g.output;
    if grad_out.shape() != os {
        return Err(Error::ShapeMismatch {
            op: "reference backward",
            left: os,
            right: grad_out.shape(),
        });
    }
    let [kd, kh, kw] = g.ext;
    let mut grad_x = Tensor5::zeros(g.input)?;
    let mut grad_w = Tensor5::zeros(k.weights.shape())?;
    let mut grad_b = vec![T::zero(); os.c];
    #[allow(clippy::needless_range_loop)]
    for n in 0..os.n {
        for od in 0..os.d {
            for oh in 0..os.h {
                for ow in 0..os.w {
                    for co in 0..os.c {
                        let go = grad_out.get(n, od, oh, ow, co);
                        grad_b[co] = grad_b[co] + go;
                        for td in 0..kd {
                            for th in 0..kh {
                                for tw in 0..kw {
                                    let (Some(id), Some(ih), Some(iw)) = (
                                        g.source(0, od, td),
                                        g.source(1, oh, th),
                                        g.source(2, ow, tw),
                                    ) else {
                                        continue;
                                    };
                                    for ci in 0..g.input.c {
                                        let gx = grad_x.get(n, id, ih, iw, ci)
                                            + go * k.weights.get(td, th, tw, ci, co);
                                        grad_x.set(n, id, ih, iw, ci, gx);
                                        let gw = grad_w.get(td, th, tw, ci, co)
                                            + go * x.get(n, id, ih, iw, ci);
                                        grad_w.set(td, th, tw, ci, co, gw);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}
