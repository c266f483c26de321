use crate::error::{Error, Result};
use crate::tensor5::{Element, Tensor5};

pub fn relu<T: Element>(x: &Tensor5<T>) -> Tensor5<T> {
    x.map_unary(|v| v.max(T::zero()))
}

/// Masks `grad_out` by the sign of the forward output; the gradient at the
/// kink itself is taken as zero.
pub fn relu_backward<T: Element>(output: &Tensor5<T>, grad_out: &Tensor5<T>) -> Result<Tensor5<T>> {
    check(output, grad_out, "relu_backward")?;
    let mut g = grad_out.clone();
    for (gv, &y) in g.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

#[inline]
fn logistic<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Element>(x: &Tensor5<T>) -> Tensor5<T> {
    x.map_unary(logistic)
}

/// `grad_out · σ·(1 − σ)`, evaluated from the forward output.
pub fn sigmoid_backward<T: Element>(
    output: &Tensor5<T>,
    grad_out: &Tensor5<T>,
) -> Result<Tensor5<T>> {
    check(output, grad_out, "sigmoid_backward")?;
    let mut g = grad_out.clone();
    for (gv, &s) in g.data_mut().iter_mut().zip(output.data()) {
        *gv = *gv * s * (T::one() - s);
    }
    Ok(g)
}

fn check<T: Element>(a: &Tensor5<T>, b: &Tensor5<T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}
