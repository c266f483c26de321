//! Dense rank-5 tensors in `(n, d, h, w, c)` channels-last order.
//!
//! `n` is the batch axis, `d` the temporal depth (frames), then height, width
//! and channels. Offsets are row-major, so the channel axis is contiguous and
//! the innermost loops of the convolution kernels run over it.
//!
//! There is no broadcasting: binary elementwise operations require identical
//! shapes and report a [`Error::ShapeMismatch`] otherwise.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Floating point precision of a tensor. Fixed by the element type at
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Scalar types a [`Tensor5`] can hold.
pub trait Element:
    Float + FromPrimitive + Sum + Default + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    const PRECISION: Precision;

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossless(self) -> f64;
}

impl Element for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }
}

/// Extents of a rank-5 tensor. All extents are at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape5 {
    pub n: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape5 {
    pub fn new(n: usize, d: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        let dims = [n, d, h, w, c];
        if dims.contains(&0) {
            return Err(Error::InvalidShape(dims));
        }
        let shape = Shape5 { n, d, h, w, c };
        shape.checked_len()?;
        Ok(shape)
    }

    pub fn from_dims(dims: [usize; 5]) -> Result<Self> {
        Self::new(dims[0], dims[1], dims[2], dims[3], dims[4])
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.n, self.d, self.h, self.w, self.c]
    }

    fn checked_len(&self) -> Result<usize> {
        let dims = self.dims();
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or(Error::Allocation(dims))?;
        // Vec<T> cannot exceed isize::MAX bytes; f64 is the widest element.
        if len > isize::MAX as usize / std::mem::size_of::<f64>() {
            return Err(Error::Allocation(dims));
        }
        Ok(len)
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.n * self.d * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major offset of `(n, d, h, w, c)`.
    #[inline]
    pub fn offset(&self, n: usize, d: usize, h: usize, w: usize, c: usize) -> usize {
        debug_assert!(n < self.n && d < self.d && h < self.h && w < self.w && c < self.c);
        (((n * self.d + d) * self.h + h) * self.w + w) * self.c + c
    }

    /// Inverse of [`Shape5::offset`].
    pub fn index(&self, offset: usize) -> [usize; 5] {
        debug_assert!(offset < self.len());
        let c = offset % self.c;
        let rest = offset / self.c;
        let w = rest % self.w;
        let rest = rest / self.w;
        let h = rest % self.h;
        let rest = rest / self.h;
        let d = rest % self.d;
        let n = rest / self.d;
        [n, d, h, w, c]
    }

    /// Same shape with a different channel count.
    pub fn with_channels(&self, c: usize) -> Result<Self> {
        Self::new(self.n, self.d, self.h, self.w, c)
    }
}

impl fmt::Display for Shape5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, {})",
            self.n, self.d, self.h, self.w, self.c
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5<T> {
    shape: Shape5,
    data: Vec<T>,
}

impl<T: Element> Tensor5<T> {
    pub fn from_vec(shape: Shape5, data: Vec<T>) -> Result<Self> {
        let expected = shape.len();
        if data.len() != expected {
            return Err(Error::BufferLength {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(Tensor5 { shape, data })
    }

    pub fn full(shape: Shape5, value: T) -> Result<Self> {
        let len = shape.checked_len()?;
        let mut data = Vec::new();
        data.try_reserve_exact(len)
            .map_err(|_| Error::Allocation(shape.dims()))?;
        data.resize(len, value);
        Ok(Tensor5 { shape, data })
    }

    pub fn zeros(shape: Shape5) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn from_fn(shape: Shape5, mut f: impl FnMut([usize; 5]) -> T) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(shape.index(i));
        }
        Ok(t)
    }

    /// Reproducible normal samples: the same `(shape, mean, std, seed)` always
    /// yields a bit-identical tensor at a given precision.
    pub fn rng_fill_normal(shape: Shape5, mean: f64, std: f64, seed: u64) -> Result<Self> {
        if !(std >= 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::geometry(
                "rng_fill_normal",
                "std must be finite and >= 0",
            ));
        }
        let normal = Normal::new(mean, std)
            .map_err(|e| Error::geometry("rng_fill_normal", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Self::zeros(shape)?;
        for v in t.data.iter_mut() {
            *v = T::from_f64_lossy(normal.sample(&mut rng));
        }
        Ok(t)
    }

    pub fn shape(&self) -> Shape5 {
        self.shape
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// In-place access, used by the optimizer and by test fixtures.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, d: usize, h: usize, w: usize, c: usize) -> T {
        self.data[self.shape.offset(n, d, h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, d: usize, h: usize, w: usize, c: usize, v: T) {
        let o = self.shape.offset(n, d, h, w, c);
        self.data[o] = v;
    }

    /// Reinterpret the same buffer under another shape of equal length.
    pub fn reshape(self, shape: Shape5) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map_unary(&self, f: impl Fn(T) -> T) -> Self {
        Tensor5 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(Tensor5 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul_elementwise(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul_elementwise", |a, b| a * b)
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map_unary(|v| v * alpha)
    }

    /// Sequential sum in offset order.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.len()).unwrap()
    }

    /// Inner product, accumulated in offset order.
    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "dot",
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// Element type conversion.
    pub fn cast<U: Element>(&self) -> Tensor5<U> {
        Tensor5 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossless()))
                .collect(),
        }
    }

    /// Stack tensors along the batch axis. All inputs must agree on
    /// `(d, h, w, c)`.
    pub fn concat_batch(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::geometry("concat_batch", "no tensors to stack"))?
            .shape;
        let mut n = 0;
        for p in parts {
            let s = p.shape;
            if (s.d, s.h, s.w, s.c) != (first.d, first.h, first.w, first.c) {
                return Err(Error::ShapeMismatch {
                    op: "concat_batch",
                    left: first,
                    right: s,
                });
            }
            n += s.n;
        }
        let shape = Shape5::new(n, first.d, first.h, first.w, first.c)?;
        let mut data = Vec::with_capacity(shape.len());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Self::from_vec(shape, data)
    }

    /// Copy of batch element `i` as a `(1, d, h, w, c)` tensor.
    pub fn batch_item(&self, i: usize) -> Result<Self> {
        let s = self.shape;
        if i >= s.n {
            return Err(Error::geometry(
                "batch_item",
                format!("index {i} out of range for batch of {}", s.n),
            ));
        }
        let per = s.d * s.h * s.w * s.c;
        let shape = Shape5::new(1, s.d, s.h, s.w, s.c)?;
        Self::from_vec(shape, self.data[i * per..(i + 1) * per].to_vec())
    }
}
