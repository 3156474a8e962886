use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel batch normalization over `[N,C,H,W]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T: Real = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: T,
    pub momentum: T,
    pub mode: BnMode,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Real = f32> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    mode: BnMode,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T: Real = f32> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Real> BatchNormLayer<T> {
    /// gamma 1, beta 0, running mean 0, running variance 1, eval mode.
    pub fn identity(channels: usize) -> Self {
        BatchNormLayer {
            gamma: Tensor::filled(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            epsilon: T::lit(DEFAULT_EPSILON),
            momentum: T::lit(DEFAULT_MOMENTUM),
            mode: BnMode::Eval,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<U: Real>(&self) -> BatchNormLayer<U> {
        BatchNormLayer {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            epsilon: U::lit(self.epsilon.as_f64()),
            momentum: U::lit(self.momentum.as_f64()),
            mode: self.mode,
        }
    }

    fn check(&self, input: &Tensor<T>) -> Result<[usize; 4]> {
        let dims = input.dims4("batchnorm input")?;
        if dims[1] != self.channels() {
            return Err(Error::shape(format!(
                "batchnorm input {:?} has {} channels, layer has {}",
                input.shape(),
                dims[1],
                self.channels()
            )));
        }
        Ok(dims)
    }

    /// Forward pass in the layer's current mode. Train mode updates the
    /// running statistics.
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        match self.mode {
            BnMode::Train => self.forward_train(input),
            BnMode::Eval => self.forward_eval(input),
        }
    }

    /// Eval-mode forward; never touches running statistics.
    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let [n, c, h, w] = self.check(input)?;
        let inv_std: Vec<T> = self
            .running_var
            .data()
            .iter()
            .map(|&v| T::one() / (v + self.epsilon).sqrt())
            .collect();
        let plane = h * w;
        let mut x_hat = input.clone();
        let mut out = input.clone();
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                let (mean, g, be) = (
                    self.running_mean.data()[ch],
                    self.gamma.data()[ch],
                    self.beta.data()[ch],
                );
                for i in base..base + plane {
                    let xh = (input.data()[i] - mean) * inv_std[ch];
                    x_hat.data_mut()[i] = xh;
                    out.data_mut()[i] = g * xh + be;
                }
            }
        }
        Ok((out, BatchNormCache { x_hat, inv_std, mode: BnMode::Eval }))
    }

    /// Train-mode forward with batch statistics (biased variance), updating
    /// running statistics by momentum (unbiased variance).
    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let [n, c, h, w] = self.check(input)?;
        let plane = h * w;
        let count = n * plane;
        if count < 2 {
            return Err(Error::invalid(format!(
                "train-mode batchnorm needs at least 2 values per channel, input {:?} has {count}",
                input.shape()
            )));
        }
        let cnt = T::lit(count as f64);
        let x = input.data();
        let mut x_hat = input.clone();
        let mut out = input.clone();
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let values = || (0..n).flat_map(move |b| {
                let base = (b * c + ch) * plane;
                base..base + plane
            });
            let mean = values().map(|i| x[i]).sum::<T>() / cnt;
            let var = values().map(|i| (x[i] - mean) * (x[i] - mean)).sum::<T>() / cnt;
            let istd = T::one() / (var + self.epsilon).sqrt();
            inv_std[ch] = istd;
            let (g, be) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for i in values() {
                let xh = (x[i] - mean) * istd;
                x_hat.data_mut()[i] = xh;
                out.data_mut()[i] = g * xh + be;
            }
            let m = self.momentum;
            let unbiased = var * cnt / (cnt - T::one());
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (T::one() - m) * *rm + m * mean;
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (T::one() - m) * *rv + m * unbiased;
        }
        Ok((out, BatchNormCache { x_hat, inv_std, mode: BnMode::Train }))
    }

    pub fn backward(&self, cache: &BatchNormCache<T>, grad_out: &Tensor<T>) -> Result<BatchNormGrads<T>> {
        grad_out.expect_same_shape(&cache.x_hat)?;
        let [n, c, h, w] = grad_out.dims4("batchnorm grad_out")?;
        let plane = h * w;
        let cnt = T::lit((n * plane) as f64);
        let g = grad_out.data();
        let xh = cache.x_hat.data();
        let mut gin = vec![T::zero(); g.len()];
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        for ch in 0..c {
            let idx = || (0..n).flat_map(move |b| {
                let base = (b * c + ch) * plane;
                base..base + plane
            });
            let sum_g: T = idx().map(|i| g[i]).sum();
            let sum_gx: T = idx().map(|i| g[i] * xh[i]).sum();
            gbeta[ch] = sum_g;
            ggamma[ch] = sum_gx;
            let scale = self.gamma.data()[ch] * cache.inv_std[ch];
            match cache.mode {
                BnMode::Eval => {
                    for i in idx() {
                        gin[i] = g[i] * scale;
                    }
                }
                BnMode::Train => {
                    let mean_g = sum_g / cnt;
                    let mean_gx = sum_gx / cnt;
                    for i in idx() {
                        gin[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
                    }
                }
            }
        }
        Ok(BatchNormGrads {
            input: Tensor::new(grad_out.shape(), gin)?,
            gamma: Tensor::new(&[c], ggamma)?,
            beta: Tensor::new(&[c], gbeta)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_identity_passes_input_through() {
        let mut bn = BatchNormLayer::<f64>::identity(2);
        bn.epsilon = 0.0;
        let x = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64 - 3.0);
        let (y, _) = bn.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn eval_zero_gamma_outputs_beta() {
        let mut bn = BatchNormLayer::<f32>::identity(1);
        bn.gamma = Tensor::zeros(&[1]);
        bn.beta = Tensor::filled(&[1], 5.0);
        let x = Tensor::from_fn(&[2, 1, 2, 2], |i| i as f32);
        let (y, _) = bn.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn train_mode_normalizes_with_batch_stats() {
        let mut bn = BatchNormLayer::<f32>::identity(1);
        bn.mode = BnMode::Train;
        bn.epsilon = 0.0;
        let x = Tensor::new(&[1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
        let (y, _) = bn.forward(&x).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
        // running stats: mean 0.9*0 + 0.1*3, var 0.9*1 + 0.1*2 (unbiased)
        assert!((bn.running_mean.data()[0] - 0.3).abs() < 1e-6);
        assert!((bn.running_var.data()[0] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn train_mode_rejects_single_value_per_channel() {
        let mut bn = BatchNormLayer::<f32>::identity(2);
        bn.mode = BnMode::Train;
        assert!(bn.forward(&Tensor::zeros(&[1, 2, 1, 1])).is_err());
    }

    #[test]
    fn eval_mode_ignores_batch_statistics() {
        let mut bn = BatchNormLayer::<f32>::identity(1);
        bn.running_mean = Tensor::filled(&[1], 2.0);
        bn.running_var = Tensor::filled(&[1], 4.0);
        bn.epsilon = 0.0;
        let a = Tensor::new(&[1, 1, 1, 2], vec![2.0, 6.0]).unwrap();
        let b = Tensor::new(&[1, 1, 1, 2], vec![2.0, 100.0]).unwrap();
        let (ya, _) = bn.forward(&a).unwrap();
        let (yb, _) = bn.forward(&b).unwrap();
        assert_eq!(ya.data()[0], yb.data()[0]);
        assert_eq!(ya.data(), &[0.0, 2.0]);
    }

    #[test]
    fn channel_mismatch_errors() {
        let mut bn = BatchNormLayer::<f32>::identity(3);
        assert!(bn.forward(&Tensor::zeros(&[1, 2, 2, 2])).is_err());
    }
}
