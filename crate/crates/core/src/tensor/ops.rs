//! Elementwise operations and reductions, each with its backward rule.
//!
//! Backward functions take the forward inputs (or outputs, where cheaper)
//! plus the upstream gradient and return the gradient per input.

use num_traits::Float;

use super::{Real, Tensor};
use crate::error::Result;

pub fn reduce_sum<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(x.sum())
}

/// Distributes the scalar upstream gradient to every element.
pub fn reduce_sum_backward<T: Real>(x: &Tensor<T>, upstream: T) -> Tensor<T> {
    Tensor::full(x.shape(), upstream)
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    b.expect_shape("add", a.shape())?;
    zip_map(a, b, |x, y| x + y)
}

pub fn add_backward<T: Real>(upstream: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (upstream.clone(), upstream.clone())
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    b.expect_shape("mul", a.shape())?;
    zip_map(a, b, |x, y| x * y)
}

pub fn mul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    upstream.expect_shape("mul_backward", a.shape())?;
    Ok((mul(upstream, b)?, mul(upstream, a)?))
}

/// Scalar-tensor product; the only broadcast the crate supports.
pub fn scale<T: Real>(a: &Tensor<T>, s: T) -> Tensor<T> {
    a.map(|v| v * s)
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(Float::tanh)
}

/// Backward of tanh written against the forward output `y = tanh(x)`.
pub fn tanh_backward<T: Real>(y: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    upstream.expect_shape("tanh_backward", y.shape())?;
    zip_map(y, upstream, |y, g| g * (T::one() - y * y))
}

#[inline]
pub fn leaky_relu_scalar<T: Real>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * slope
    }
}

#[inline]
pub fn leaky_relu_grad_scalar<T: Real>(x: T, slope: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        slope
    }
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| leaky_relu_scalar(v, slope))
}

/// Backward of leaky ReLU against the pre-activation. Because the slope is
/// positive the output has the same sign as the input, so passing the
/// activation output instead is equally valid.
pub fn leaky_relu_backward<T: Real>(
    x: &Tensor<T>,
    slope: T,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    upstream.expect_shape("leaky_relu_backward", x.shape())?;
    zip_map(x, upstream, |x, g| g * leaky_relu_grad_scalar(x, slope))
}

/// In-place variant used by the network layers to avoid a copy.
pub fn leaky_relu_backward_inplace<T: Real>(activation: &[T], slope: T, grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= T::zero() {
            *g = *g * slope;
        }
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}
