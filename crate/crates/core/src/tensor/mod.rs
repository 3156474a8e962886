//! Dense tensors and the handful of layers the motion-prediction and
//! feature-augmentation networks are built from.
//!
//! Every layer exposes an explicit forward and backward pass; there is no
//! autograd graph. Networks chain the backward calls by hand.
//!
//! Tensors are generic over [`Real`] so the same kernels run in `f32` for
//! inference and training and in `f64` for finite-difference gradient checks.

mod activation;
mod batchnorm;
mod bilinear;
mod conv;
mod ftns;
mod gradcheck;
mod sgd;

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

pub use activation::{activation_forward_backward, softshrink, Activation};
pub use batchnorm::{BatchNormCache, BatchNormGrads, BatchNormLayer, BnMode};
pub use bilinear::{bilinear_sample, bilinear_sample_backward, bilinear_taps, Tap};
pub use conv::{ConvGrads, ConvLayer};
pub use ftns::{read_ftns, read_named_ftns, write_ftns, write_named_ftns, FTNS_MAGIC};
pub use gradcheck::{
    finite_difference_check, GradCheckReport, Probe, FD_STEP, MAX_SKIPPED_FRACTION, RELATIVE_ERROR_FLOOR,
};
pub use sgd::Sgd;

/// Floating-point element type of a [`Tensor`].
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits in float type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Row-major n-dimensional array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("dimensions must be positive, got {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "dimensions must be positive: {shape:?}");
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    /// Values drawn uniformly from `[lo, hi)`.
    pub fn random_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::lit(rng.random_range(lo..hi)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Dimensions of a 4-d tensor, or a shape error naming `what`.
    pub fn dims4(&self, what: &str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::shape(format!("{what} must be 4-d, got {:?}", self.shape))),
        }
    }

    /// Dimensions of a 3-d tensor, or a shape error naming `what`.
    pub fn dims3(&self, what: &str) -> Result<[usize; 3]> {
        match self.shape[..] {
            [c, h, w] => Ok([c, h, w]),
            _ => Err(Error::shape(format!("{what} must be 3-d, got {:?}", self.shape))),
        }
    }

    /// Element of a 4-d tensor.
    #[inline]
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let s = &self.shape;
        self.data[((n * s[1] + c) * s[2] + y) * s[3] + x]
    }

    /// Element of a 3-d tensor.
    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> T {
        let s = &self.shape;
        self.data[(c * s[1] + y) * s[2] + x]
    }

    /// Concatenate 3-d `[C,H,W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let [_, h, w] = parts
            .first()
            .ok_or_else(|| Error::shape("nothing to concatenate"))?
            .dims3("concat input")?;
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let [c, ph, pw] = p.dims3("concat input")?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape(format!(
                    "concat spatial sizes differ: {:?} vs {:?}",
                    parts[0].shape, p.shape
                )));
            }
            channels += c;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(&[channels, h, w], data)
    }

    /// Split a 3-d tensor along channels at `at`.
    pub fn split_channels(&self, at: usize) -> Result<(Self, Self)> {
        let [c, h, w] = self.dims3("split input")?;
        if at == 0 || at >= c {
            return Err(Error::shape(format!("cannot split {c} channels at {at}")));
        }
        let cut = at * h * w;
        Ok((
            Tensor::new(&[at, h, w], self.data[..cut].to_vec())?,
            Tensor::new(&[c - at, h, w], self.data[cut..].to_vec())?,
        ))
    }
}
