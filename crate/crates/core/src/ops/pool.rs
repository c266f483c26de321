//! 3D max pooling with recorded argmax, and bed-of-nails unpooling.

use crate::error::{Error, Result};
use crate::tensor5::{Element, Shape5, Tensor5};

/// Pooling window, equal to its stride on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    /// `(s_d, s_h, s_w)`.
    pub stride: [usize; 3],
    /// Keep partial windows at the far edge of each axis.
    pub ceil_mode: bool,
}

impl PoolSpec {
    pub fn new(stride: [usize; 3], ceil_mode: bool) -> Result<Self> {
        if stride.contains(&0) {
            return Err(Error::geometry(
                "maxpool3d",
                "stride components must be >= 1",
            ));
        }
        Ok(PoolSpec { stride, ceil_mode })
    }

    pub fn output_shape(&self, input: Shape5) -> Result<Shape5> {
        let ext = [input.d, input.h, input.w];
        let mut out = [0; 3];
        for a in 0..3 {
            let s = self.stride[a];
            out[a] = if self.ceil_mode {
                ext[a].div_ceil(s)
            } else {
                ext[a] / s
            };
            if out[a] == 0 {
                return Err(Error::geometry(
                    "maxpool3d",
                    format!("stride {s} exceeds extent {} without ceil mode", ext[a]),
                ));
            }
        }
        Shape5::new(input.n, out[0], out[1], out[2], input.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutput<T> {
    pub values: Tensor5<T>,
    /// Flat input offset of the maximum selected for each output element.
    pub argmax: Vec<usize>,
    pub input_shape: Shape5,
}

/// Windows are scanned in increasing offset order and only a strictly larger
/// value replaces the current maximum, so ties go to the smallest offset.
pub fn maxpool3d_forward<T: Element>(x: &Tensor5<T>, spec: &PoolSpec) -> Result<PoolOutput<T>> {
    let is = x.shape();
    let os = spec.output_shape(is)?;
    let [sd, sh, sw] = spec.stride;
    let xs = x.data();
    let mut values = Tensor5::zeros(os)?;
    let mut argmax = vec![0usize; os.len()];
    let vs = values.data_mut();
    for n in 0..os.n {
        for od in 0..os.d {
            let d_range = od * sd..((od + 1) * sd).min(is.d);
            for oh in 0..os.h {
                let h_range = oh * sh..((oh + 1) * sh).min(is.h);
                for ow in 0..os.w {
                    let w_range = ow * sw..((ow + 1) * sw).min(is.w);
                    for c in 0..os.c {
                        let mut best: Option<(usize, T)> = None;
                        for id in d_range.clone() {
                            for ih in h_range.clone() {
                                for iw in w_range.clone() {
                                    let o = is.offset(n, id, ih, iw, c);
                                    let v = xs[o];
                                    if best.is_none_or(|(_, b)| v > b) {
                                        best = Some((o, v));
                                    }
                                }
                            }
                        }
                        let (o, v) = best.expect("pool windows are never empty");
                        let out = os.offset(n, od, oh, ow, c);
                        vs[out] = v;
                        argmax[out] = o;
                    }
                }
            }
        }
    }
    Ok(PoolOutput {
        values,
        argmax,
        input_shape: is,
    })
}

/// Routes each output gradient to the input element that won its window.
pub fn maxpool3d_backward<T: Element>(
    pooled: &PoolOutput<T>,
    grad_out: &Tensor5<T>,
) -> Result<Tensor5<T>> {
    if grad_out.shape() != pooled.values.shape() {
        return Err(Error::ShapeMismatch {
            op: "maxpool3d_backward",
            left: pooled.values.shape(),
            right: grad_out.shape(),
        });
    }
    let mut grad_x = Tensor5::zeros(pooled.input_shape)?;
    let gx = grad_x.data_mut();
    for (&src, &g) in pooled.argmax.iter().zip(grad_out.data()) {
        gx[src] = gx[src] + g;
    }
    Ok(grad_x)
}

fn unpool_shape(input: Shape5, factor: [usize; 3]) -> Result<Shape5> {
    if factor.contains(&0) {
        return Err(Error::geometry("unpool3d", "factors must be >= 1"));
    }
    Shape5::new(
        input.n,
        input.d * factor[0],
        input.h * factor[1],
        input.w * factor[2],
        input.c,
    )
}

/// Bed-of-nails upsampling: each value lands on the minimal corner of its
/// `f_d × f_h × f_w` cell and the rest of the cell is zero.
pub fn unpool3d_forward<T: Element>(x: &Tensor5<T>, factor: [usize; 3]) -> Result<Tensor5<T>> {
    let is = x.shape();
    let os = unpool_shape(is, factor)?;
    let mut out = Tensor5::zeros(os)?;
    let ys = out.data_mut();
    for n in 0..is.n {
        for d in 0..is.d {
            for h in 0..is.h {
                for w in 0..is.w {
                    let src = is.offset(n, d, h, w, 0);
                    let dst = os.offset(n, d * factor[0], h * factor[1], w * factor[2], 0);
                    ys[dst..dst + is.c].copy_from_slice(&x.data()[src..src + is.c]);
                }
            }
        }
    }
    Ok(out)
}

pub fn unpool3d_backward<T: Element>(
    grad_out: &Tensor5<T>,
    input_shape: Shape5,
    factor: [usize; 3],
) -> Result<Tensor5<T>> {
    let os = unpool_shape(input_shape, factor)?;
    if grad_out.shape() != os {
        return Err(Error::ShapeMismatch {
            op: "unpool3d_backward",
            left: os,
            right: grad_out.shape(),
        });
    }
    let is = input_shape;
    let mut grad_x = Tensor5::zeros(is)?;
    let gx = grad_x.data_mut();
    for n in 0..is.n {
        for d in 0..is.d {
            for h in 0..is.h {
                for w in 0..is.w {
                    let dst = is.offset(n, d, h, w, 0);
                    let src = os.offset(n, d * factor[0], h * factor[1], w * factor[2], 0);
                    gx[dst..dst + is.c].copy_from_slice(&grad_out.data()[src..src + is.c]);
                }
            }
        }
    }
    Ok(grad_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shape(n: usize, d: usize, h: usize, w: usize, c: usize) -> Shape5 {
        Shape5::new(n, d, h, w, c).unwrap()
    }

    #[test]
    fn constant_input_picks_first_offset() {
        let x = Tensor5::<f32>::full(shape(1, 2, 4, 4, 2), 0.3).unwrap();
        let p = maxpool3d_forward(&x, &PoolSpec::new([1, 2, 2], true).unwrap()).unwrap();
        assert!(p.values.data().iter().all(|&v| v == 0.3));
        for (o, &src) in p.argmax.iter().enumerate() {
            let [n, d, h, w, c] = p.values.shape().index(o);
            assert_eq!(src, x.shape().offset(n, d, 2 * h, 2 * w, c));
        }
    }

    #[test]
    fn two_by_two_block_max() {
        let x = Tensor5::from_vec(shape(1, 1, 2, 2, 1), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let p = maxpool3d_forward(&x, &PoolSpec::new([1, 2, 2], false).unwrap()).unwrap();
        assert_eq!(p.values.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);
    }

    #[test]
    fn ceil_mode_depth_schedule() {
        // Depth 3 under a stride-2 window: windows {0, 1} and {2}.
        let x = Tensor5::from_fn(shape(1, 3, 2, 2, 1), |[_, d, h, w, _]| {
            (10 * d + 2 * h + w) as f64
        })
        .unwrap();
        let spec = PoolSpec::new([2, 2, 2], true).unwrap();
        let p = maxpool3d_forward(&x, &spec).unwrap();
        assert_eq!(p.values.shape(), shape(1, 2, 1, 1, 1));
        assert_eq!(p.values.data(), &[13.0, 23.0]);
        assert_eq!(p.argmax[1], x.shape().offset(0, 2, 1, 1, 0));
        let again = maxpool3d_forward(&p.values, &spec).unwrap();
        assert_eq!(again.values.shape().d, 1);

        let floor = PoolSpec::new([2, 2, 2], false).unwrap();
        assert_eq!(floor.output_shape(x.shape()).unwrap().d, 1);
        let thin = shape(1, 1, 2, 2, 1);
        assert!(floor.output_shape(thin).is_err());
        assert!(PoolSpec::new([0, 1, 1], true).is_err());
    }

    #[test]
    fn unpool_places_value_at_corner() {
        let x = Tensor5::from_vec(shape(1, 1, 1, 1, 1), vec![5.0f32]).unwrap();
        let y = unpool3d_forward(&x, [1, 2, 2]).unwrap();
        assert_eq!(y.shape(), shape(1, 1, 2, 2, 1));
        assert_eq!(y.data(), &[5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unpool_preserves_sum() {
        let x = Tensor5::<f64>::rng_fill_normal(shape(2, 1, 3, 4, 3), 0.0, 1.0, 4).unwrap();
        let y = unpool3d_forward(&x, [1, 2, 2]).unwrap();
        let direct: f64 = x.data().iter().sum();
        assert!((y.sum() - direct).abs() < 1e-12);
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = Tensor5::<f64>::rng_fill_normal(shape(2, 3, 4, 6, 2), 0.0, 1.0, 8).unwrap();
        let p = maxpool3d_forward(&x, &PoolSpec::new([2, 2, 2], true).unwrap()).unwrap();
        let g = Tensor5::rng_fill_normal(p.values.shape(), 0.0, 1.0, 9).unwrap();
        let gx = maxpool3d_backward(&p, &g).unwrap();
        assert!((gx.sum() - g.sum()).abs() < 1e-12);
        let nonzero = gx.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, g.len());
        for (o, &src) in p.argmax.iter().enumerate() {
            assert_eq!(gx.data()[src], g.data()[o]);
            assert_eq!(x.data()[src], p.values.data()[o]);
        }
    }

    #[test]
    fn unpool_backward_gathers_corners() {
        let is = shape(1, 1, 2, 2, 1);
        let g =
            Tensor5::from_fn(shape(1, 1, 4, 4, 1), |[_, _, h, w, _]| (4 * h + w) as f32).unwrap();
        let gx = unpool3d_backward(&g, is, [1, 2, 2]).unwrap();
        assert_eq!(gx.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    proptest! {
        #[test]
        fn argmax_inside_window(seed in any::<u64>(), ceil in any::<bool>()) {
            let x = Tensor5::<f64>::rng_fill_normal(shape(1, 3, 5, 5, 2), 0.0, 1.0, seed).unwrap();
            let spec = PoolSpec::new([2, 2, 2], ceil).unwrap();
            let p = maxpool3d_forward(&x, &spec).unwrap();
            for (o, &src) in p.argmax.iter().enumerate() {
                let [n, d, h, w, c] = p.values.shape().index(o);
                let [sn, sd, sh, sw, sc] = x.shape().index(src);
                prop_assert_eq!((sn, sc), (n, c));
                prop_assert_eq!((sd / 2, sh / 2, sw / 2), (d, h, w));
                prop_assert_eq!(x.data()[src], p.values.data()[o]);
            }
        }

        #[test]
        fn pool_inverts_unpool_on_nonnegative(seed in any::<u64>()) {
            let x = Tensor5::<f64>::rng_fill_normal(shape(1, 2, 3, 3, 2), 0.0, 1.0, seed)
                .unwrap()
                .map_unary(f64::abs);
            for f in [[1, 2, 2], [2, 2, 2], [1, 1, 3]] {
                let up = unpool3d_forward(&x, f).unwrap();
                let back = maxpool3d_forward(&up, &PoolSpec::new(f, false).unwrap()).unwrap();
                prop_assert_eq!(&back.values, &x);
            }
        }
    }
}
