use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// 2-d cross-correlation layer with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T: Real = f32> {
    /// `[out_ch, in_ch, kh, kw]`
    pub weight: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

/// Gradients produced by [`ConvLayer::backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let [out_ch, _, _, _] = weight.dims4("conv weight")?;
        if bias.shape() != [out_ch] {
            return Err(Error::shape(format!(
                "conv bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv stride must be positive"));
        }
        Ok(ConvLayer { weight, bias, stride, padding })
    }

    /// Zero weights and bias.
    pub fn zeros(out_ch: usize, in_ch: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvLayer {
            weight: Tensor::zeros(&[out_ch, in_ch, k, k]),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, bias zero.
    pub fn fan_in_uniform<R: Rng + ?Sized>(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Self::scaled_uniform(out_ch, in_ch, k, stride, padding, 1.0, rng)
    }

    /// Weights uniform in `±gain/sqrt(fan_in)`, bias zero.
    pub fn scaled_uniform<R: Rng + ?Sized>(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let bound = gain / ((in_ch * k * k) as f64).sqrt();
        ConvLayer {
            weight: Tensor::random_uniform(&[out_ch, in_ch, k, k], -bound, bound, rng),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < kh || pw < kw {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<[usize; 6]> {
        let [n, c, h, w] = input.dims4("conv input")?;
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv input {:?} has {c} channels but weight {:?} expects {}",
                input.shape(),
                self.weight.shape(),
                self.in_channels()
            )));
        }
        let (oh, ow) = self.output_size(h, w).ok_or_else(|| {
            Error::shape(format!(
                "conv input {:?} is smaller than kernel {:?}",
                input.shape(),
                self.weight.shape()
            ))
        })?;
        Ok([n, c, h, w, oh, ow])
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w, oh, ow] = self.check_input(input)?;
        let (kh, kw) = self.kernel();
        let oc = self.out_channels();
        let (stride, pad) = (self.stride as isize, self.padding as isize);
        let x = input.data();
        let wt = self.weight.data();
        let mut out = vec![T::zero(); n * oc * oh * ow];

        for b in 0..n {
            for o in 0..oc {
                let bias = self.bias.data()[o];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias;
                        for ci in 0..c {
                            let xbase = (b * c + ci) * h * w;
                            let wbase = (o * c + ci) * kh * kw;
                            for ky in 0..kh {
                                let iy = oy as isize * stride + ky as isize - pad;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = ox as isize * stride + kx as isize - pad;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x[xbase + iy as usize * w + ix as usize]
                                        * wt[wbase + ky * kw + kx];
                                }
                            }
                        }
                        out[((b * oc + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, oc, oh, ow], out)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let [n, c, h, w, oh, ow] = self.check_input(input)?;
        let oc = self.out_channels();
        if grad_out.shape() != [n, oc, oh, ow] {
            return Err(Error::shape(format!(
                "conv grad_out {:?} does not match forward output {:?}",
                grad_out.shape(),
                [n, oc, oh, ow]
            )));
        }
        let (kh, kw) = self.kernel();
        let (stride, pad) = (self.stride as isize, self.padding as isize);
        let x = input.data();
        let wt = self.weight.data();
        let g = grad_out.data();
        let mut gx = vec![T::zero(); x.len()];
        let mut gw = vec![T::zero(); wt.len()];
        let mut gb = vec![T::zero(); oc];

        for b in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = g[((b * oc + o) * oh + oy) * ow + ox];
                        if go == T::zero() {
                            continue;
                        }
                        gb[o] += go;
                        for ci in 0..c {
                            let xbase = (b * c + ci) * h * w;
                            let wbase = (o * c + ci) * kh * kw;
                            for ky in 0..kh {
                                let iy = oy as isize * stride + ky as isize - pad;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = ox as isize * stride + kx as isize - pad;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = xbase + iy as usize * w + ix as usize;
                                    let wi = wbase + ky * kw + kx;
                                    gx[xi] += go * wt[wi];
                                    gw[wi] += go * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(ConvGrads {
            input: Tensor::new(input.shape(), gx)?,
            weight: Tensor::new(self.weight.shape(), gw)?,
            bias: Tensor::new(&[oc], gb)?,
        })
    }
}
