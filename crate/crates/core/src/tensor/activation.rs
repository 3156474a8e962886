use super::{Real, Tensor};
use crate::error::Result;

/// Elementwise nonlinearities used by the networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Shrinkage with dead zone `[-lambda, lambda]`.
    Softshrink(f64),
}

/// `x - λ` above the dead zone, `x + λ` below it, zero inside (inclusive).
#[inline]
pub fn softshrink<T: Real>(x: T, lambda: T) -> T {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        T::zero()
    }
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Softshrink(l) => softshrink(x, T::lit(l)),
        }
    }

    /// Derivative at `x`. Kinks (relu at 0, softshrink at ±λ) take the zero
    /// branch.
    #[inline]
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (T::one() - s)
            }
            Activation::Softshrink(l) => {
                let l = T::lit(l);
                if x > l || x < -l {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Region index of `x` relative to the kinks; differs across a kink.
    #[inline]
    pub fn branch<T: Real>(self, x: T) -> i8 {
        match self {
            Activation::Relu => (x > T::zero()) as i8,
            Activation::Sigmoid => 0,
            Activation::Softshrink(l) => {
                let l = T::lit(l);
                if x > l {
                    1
                } else if x < -l {
                    -1
                } else {
                    0
                }
            }
        }
    }

    pub fn forward<T: Real>(self, input: &Tensor<T>) -> Tensor<T> {
        input.map(|v| self.apply(v))
    }

    pub fn backward<T: Real>(self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        input.zip_map(grad_out, |x, g| g * self.derivative(x))
    }
}

/// Forward output and input gradient in one call.
pub fn activation_forward_backward<T: Real>(
    kind: Activation,
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let grad = kind.backward(input, grad_out)?;
    Ok((kind.forward(input), grad))
}
