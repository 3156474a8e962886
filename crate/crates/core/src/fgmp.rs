//! Flow-guided motion prediction.
//!
//! A three-layer convolutional network reads the 3×3 flow neighbourhood around
//! a track's center and predicts the center's displacement to the next frame.
//! Each convolution is followed by batch norm and a softshrink; the second
//! layer adds its input back before the shrink. The final valid 3×3
//! convolution collapses the crop to a single `(dx, dy)` pair.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{crop3x3, round_half_up, FlowMap};
use crate::geometry::BBox;
use crate::tensor::{
    read_ftns, read_named_ftns, write_ftns, write_named_ftns, Activation, BatchNormCache,
    BatchNormLayer, BnMode, ConvLayer, Real, Sgd, Tensor, softshrink,
};

pub const SOFTSHRINK_LAMBDA: f64 = 0.5;
pub const HIDDEN_CHANNELS: usize = 16;
const INIT_GAIN: f64 = 1.732_050_807_568_877_2;

/// Predicted center offset in flow-map pixels (or image pixels where noted).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotionDelta {
    pub dx: f32,
    pub dy: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPredictionNet<T: Real = f32> {
    pub conv1: ConvLayer<T>,
    pub bn1: BatchNormLayer<T>,
    pub conv2: ConvLayer<T>,
    pub bn2: BatchNormLayer<T>,
    pub conv3: ConvLayer<T>,
    pub bn3: BatchNormLayer<T>,
    pub lambda: f64,
}

/// Activations saved by a forward pass.
#[derive(Debug, Clone)]
pub struct MpnTrace<T: Real = f32> {
    input: Tensor<T>,
    bn1_out: Tensor<T>,
    bn1_cache: BatchNormCache<T>,
    h1: Tensor<T>,
    bn2_cache: BatchNormCache<T>,
    residual: Tensor<T>,
    h2: Tensor<T>,
    bn3_out: Tensor<T>,
    bn3_cache: BatchNormCache<T>,
    /// `[N,2,1,1]`
    pub output: Tensor<T>,
}

impl<T: Real> MpnTrace<T> {
    /// Softshrink region of every pre-activation, for gradient checks.
    pub fn branches(&self, lambda: f64) -> Vec<i8> {
        let s = Activation::Softshrink(lambda);
        self.bn1_out
            .data()
            .iter()
            .chain(self.residual.data())
            .chain(self.bn3_out.data())
            .map(|&v| s.branch(v))
            .collect()
    }

    pub fn deltas(&self) -> Vec<MotionDelta> {
        self.output
            .data()
            .chunks(2)
            .map(|p| MotionDelta { dx: p[0].as_f64() as f32, dy: p[1].as_f64() as f32 })
            .collect()
    }
}

/// Gradients for every learnable tensor, in [`MotionPredictionNet::parameters`] order.
#[derive(Debug, Clone)]
pub struct MpnGrads<T: Real = f32> {
    pub tensors: Vec<Tensor<T>>,
    pub input: Tensor<T>,
}

const PARAM_NAMES: [&str; 12] = [
    "conv1.weight",
    "conv1.bias",
    "bn1.gamma",
    "bn1.beta",
    "conv2.weight",
    "conv2.bias",
    "bn2.gamma",
    "bn2.beta",
    "conv3.weight",
    "conv3.bias",
    "bn3.gamma",
    "bn3.beta",
];

impl<T: Real> MotionPredictionNet<T> {
    /// Unit-variance uniform convolutions (`±sqrt(3/fan_in)`), identity batch
    /// norms. With running statistics at identity the smaller `±1/sqrt(fan_in)`
    /// bound shrinks activations into the softshrink dead zone by the last
    /// layer, where they receive no gradient.
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let c = HIDDEN_CHANNELS;
        let g = INIT_GAIN;
        MotionPredictionNet {
            conv1: ConvLayer::scaled_uniform(c, 2, 3, 1, 1, g, rng),
            bn1: BatchNormLayer::identity(c),
            conv2: ConvLayer::scaled_uniform(c, c, 3, 1, 1, g, rng),
            bn2: BatchNormLayer::identity(c),
            conv3: ConvLayer::scaled_uniform(2, c, 3, 1, 0, g, rng),
            bn3: BatchNormLayer::identity(2),
            lambda: SOFTSHRINK_LAMBDA,
        }
    }

    /// All weights and biases zero; outputs `(0, 0)` for every input.
    pub fn zeroed() -> Self {
        let c = HIDDEN_CHANNELS;
        MotionPredictionNet {
            conv1: ConvLayer::zeros(c, 2, 3, 1, 1),
            bn1: BatchNormLayer::identity(c),
            conv2: ConvLayer::zeros(c, c, 3, 1, 1),
            bn2: BatchNormLayer::identity(c),
            conv3: ConvLayer::zeros(2, c, 3, 1, 0),
            bn3: BatchNormLayer::identity(2),
            lambda: SOFTSHRINK_LAMBDA,
        }
    }

    pub fn cast<U: Real>(&self) -> MotionPredictionNet<U> {
        MotionPredictionNet {
            conv1: self.conv1.cast(),
            bn1: self.bn1.cast(),
            conv2: self.conv2.cast(),
            bn2: self.bn2.cast(),
            conv3: self.conv3.cast(),
            bn3: self.bn3.cast(),
            lambda: self.lambda,
        }
    }

    pub fn set_mode(&mut self, mode: BnMode) {
        self.bn1.mode = mode;
        self.bn2.mode = mode;
        self.bn3.mode = mode;
    }

    pub fn parameters(&self) -> [&Tensor<T>; 12] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.conv3.weight,
            &self.conv3.bias,
            &self.bn3.gamma,
            &self.bn3.beta,
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut Tensor<T>; 12] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.conv3.weight,
            &mut self.conv3.bias,
            &mut self.bn3.gamma,
            &mut self.bn3.beta,
        ]
    }

    /// All learnable values concatenated in [`Self::parameters`] order.
    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameters().iter().flat_map(|t| t.data().iter().map(|v| v.as_f64())).collect()
    }

    /// Inverse of [`Self::flat_parameters`].
    pub fn set_flat_parameters(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.parameters().iter().map(|t| t.len()).sum();
        if values.len() != total {
            return Err(Error::shape(format!("expected {total} parameters, got {}", values.len())));
        }
        let mut rest = values;
        for t in self.parameters_mut() {
            let (head, tail) = rest.split_at(t.len());
            for (d, &v) in t.data_mut().iter_mut().zip(head) {
                *d = T::lit(v);
            }
            rest = tail;
        }
        Ok(())
    }

    fn shrink(&self) -> Activation {
        Activation::Softshrink(self.lambda)
    }

    fn check_input(input: &Tensor<T>) -> Result<()> {
        match input.shape() {
            [_, 2, 3, 3] => Ok(()),
            s => Err(Error::shape(format!("motion predictor expects [N,2,3,3] crops, got {s:?}"))),
        }
    }

    /// Forward pass over a batch `[N,2,3,3]`. Batch norms run in their
    /// current mode; train mode updates running statistics.
    pub fn forward_batch(&mut self, input: &Tensor<T>) -> Result<MpnTrace<T>> {
        Self::check_input(input)?;
        let s = self.shrink();
        let c1 = self.conv1.forward(input)?;
        let (bn1_out, bn1_cache) = self.bn1.forward(&c1)?;
        let h1 = s.forward(&bn1_out);
        let c2 = self.conv2.forward(&h1)?;
        let (b2, bn2_cache) = self.bn2.forward(&c2)?;
        let residual = h1.add(&b2)?;
        let h2 = s.forward(&residual);
        let c3 = self.conv3.forward(&h2)?;
        let (bn3_out, bn3_cache) = self.bn3.forward(&c3)?;
        let output = s.forward(&bn3_out);
        Ok(MpnTrace {
            input: input.clone(),
            bn1_out,
            bn1_cache,
            h1,
            bn2_cache,
            residual,
            h2,
            bn3_out,
            bn3_cache,
            output,
        })
    }

    /// Inference with running statistics, whatever the stored mode.
    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<MpnTrace<T>> {
        let mut net = self.clone();
        net.set_mode(BnMode::Eval);
        net.forward_batch(input)
    }

    pub fn backward(&self, trace: &MpnTrace<T>, grad_out: &Tensor<T>) -> Result<MpnGrads<T>> {
        grad_out.expect_same_shape(&trace.output)?;
        let s = self.shrink();
        let g_bn3 = s.backward(&trace.bn3_out, grad_out)?;
        let bn3 = self.bn3.backward(&trace.bn3_cache, &g_bn3)?;
        let conv3 = self.conv3.backward(&trace.h2, &bn3.input)?;
        let g_res = s.backward(&trace.residual, &conv3.input)?;
        let bn2 = self.bn2.backward(&trace.bn2_cache, &g_res)?;
        let conv2 = self.conv2.backward(&trace.h1, &bn2.input)?;
        let g_h1 = conv2.input.add(&g_res)?;
        let g_bn1 = s.backward(&trace.bn1_out, &g_h1)?;
        let bn1 = self.bn1.backward(&trace.bn1_cache, &g_bn1)?;
        let conv1 = self.conv1.backward(&trace.input, &bn1.input)?;
        Ok(MpnGrads {
            tensors: vec![
                conv1.weight,
                conv1.bias,
                bn1.gamma,
                bn1.beta,
                conv2.weight,
                conv2.bias,
                bn2.gamma,
                bn2.beta,
                conv3.weight,
                conv3.bias,
                bn3.gamma,
                bn3.beta,
            ],
            input: conv1.input,
        })
    }
}

impl MotionPredictionNet<f32> {
    /// Predicts the offset for one `[2,3,3]` crop.
    pub fn predict(&self, crop: &Tensor<f32>) -> Result<MotionDelta> {
        if crop.shape() != [2, 3, 3] {
            return Err(Error::shape(format!("crop must be [2,3,3], got {:?}", crop.shape())));
        }
        let input = crop.clone().reshape(&[1, 2, 3, 3])?;
        Ok(self.forward_eval(&input)?.deltas()[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut items: Vec<(String, Tensor<f32>)> = PARAM_NAMES
            .iter()
            .zip(self.parameters())
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        for (name, bn) in [("bn1", &self.bn1), ("bn2", &self.bn2), ("bn3", &self.bn3)] {
            items.push((format!("{name}.running_mean"), bn.running_mean.clone()));
            items.push((format!("{name}.running_var"), bn.running_var.clone()));
        }
        items.push(("lambda".into(), Tensor::new(&[1], vec![self.lambda as f32])?));
        let file = fs::File::create(path)?;
        write_named_ftns(&items, BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        let items = read_named_ftns(BufReader::new(file))?;
        let mut net = Self::zeroed();
        let take = |name: &str, dst: &mut Tensor<f32>| -> Result<()> {
            let t = items
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::MissingKey(name.to_string()))?;
            if t.shape() != dst.shape() {
                return Err(Error::shape(format!(
                    "{name}: stored {:?}, expected {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            *dst = t.clone();
            Ok(())
        };
        for (name, dst) in PARAM_NAMES.iter().zip(net.parameters_mut()) {
            take(name, dst)?;
        }
        take("bn1.running_mean", &mut net.bn1.running_mean)?;
        take("bn1.running_var", &mut net.bn1.running_var)?;
        take("bn2.running_mean", &mut net.bn2.running_mean)?;
        take("bn2.running_var", &mut net.bn2.running_var)?;
        take("bn3.running_mean", &mut net.bn3.running_mean)?;
        take("bn3.running_var", &mut net.bn3.running_var)?;
        let mut lambda = Tensor::zeros(&[1]);
        take("lambda", &mut lambda)?;
        net.lambda = lambda.data()[0] as f64;
        Ok(net)
    }
}

/// Mean L1 loss over a batch and its gradient with respect to the outputs.
/// Zero residuals take a zero subgradient.
pub fn l1_loss<T: Real>(output: &Tensor<T>, targets: &[(T, T)]) -> (T, Tensor<T>, Vec<i8>) {
    let n = targets.len();
    let inv_n = T::one() / T::lit(n as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(output.shape());
    let mut signs = Vec::with_capacity(2 * n);
    for (i, &(gx, gy)) in targets.iter().enumerate() {
        for (k, g) in [gx, gy].into_iter().enumerate() {
            let r = output.data()[2 * i + k] - g;
            loss += r.abs();
            let sign = if r > T::zero() {
                1
            } else if r < T::zero() {
                -1
            } else {
                0
            };
            signs.push(sign);
            grad.data_mut()[2 * i + k] = T::lit(sign as f64) * inv_n;
        }
    }
    (loss * inv_n, grad, signs)
}

/// One supervised example: a flow crop and the true center offset, both in
/// flow-map pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct MpnSample {
    pub crop: Tensor<f32>,
    pub gx: f32,
    pub gy: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// The returned weights are the mean of the weights at the end of each
    /// of this many final epochs. 1 keeps the last iterate.
    pub average_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 200, lr: 1e-2, momentum: 0.9, batch_size: 32, seed: 0, average_epochs: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Training-set L1 loss after each epoch, evaluated with running
    /// statistics as the net is used at inference.
    pub loss_curve: Vec<f32>,
    /// Mean minibatch loss seen during each epoch. The last batch norm
    /// removes each batch's mean, so this stays above `loss_curve` by
    /// roughly the spread of per-batch target means.
    pub batch_loss_curve: Vec<f32>,
    /// Training-set loss of the returned (averaged) weights.
    pub final_loss: f32,
}

fn stack_crops(samples: &[&MpnSample]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(samples.len() * 18);
    for s in samples {
        if s.crop.shape() != [2, 3, 3] {
            return Err(Error::shape(format!("crop must be [2,3,3], got {:?}", s.crop.shape())));
        }
        data.extend_from_slice(s.crop.data());
    }
    Tensor::new(&[samples.len(), 2, 3, 3], data)
}

/// Trains with minibatch SGD on the mean L1 loss.
///
/// Batch norms use batch statistics during training. A minibatch of a single
/// crop has one value per channel after the last layer, so such a batch runs
/// with running statistics instead.
///
/// Under L1 the sign gradient keeps the weights moving by about
/// `lr / (1 - momentum)` per step even at the optimum, so the result is the
/// average over the last `average_epochs` epochs, with batch-norm statistics
/// recomputed for the averaged weights.
pub fn train_mpn(net: &mut MotionPredictionNet<f32>, data: &[MpnSample], cfg: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.average_epochs == 0 {
        return Err(Error::invalid("epochs, batch size and averaged epochs must be positive"));
    }
    let average_from = cfg.epochs.saturating_sub(cfg.average_epochs);
    let mut average: Option<(Vec<f64>, usize)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut batch_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&MpnSample> = chunk.iter().map(|&i| &data[i]).collect();
            let input = stack_crops(&batch)?;
            let targets: Vec<(f32, f32)> = batch.iter().map(|s| (s.gx, s.gy)).collect();
            net.set_mode(if batch.len() >= 2 { BnMode::Train } else { BnMode::Eval });
            let trace = net.forward_batch(&input)?;
            let (loss, grad, _) = l1_loss(&trace.output, &targets);
            total += loss as f64 * batch.len() as f64;
            let grads = net.backward(&trace, &grad)?;
            let grad_refs: Vec<&Tensor<f32>> = grads.tensors.iter().collect();
            opt.step(&mut net.parameters_mut(), &grad_refs)?;
        }
        batch_curve.push((total / data.len() as f64) as f32);
        recalibrate_batchnorm(net, data)?;
        curve.push(evaluate_l1(net, data)?);
        if epoch >= average_from {
            let w = net.flat_parameters();
            match &mut average {
                None => average = Some((w, 1)),
                Some((sum, n)) => {
                    sum.iter_mut().zip(&w).for_each(|(s, x)| *s += x);
                    *n += 1;
                }
            }
        }
    }
    if let Some((sum, n)) = average {
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        net.set_flat_parameters(&mean)?;
    }
    recalibrate_batchnorm(net, data)?;
    net.set_mode(BnMode::Eval);
    let final_loss = evaluate_l1(net, data)?;
    Ok(TrainReport { loss_curve: curve, batch_loss_curve: batch_curve, final_loss })
}

/// Replaces every running mean and variance with the statistics of the whole
/// dataset passed through the current weights. The momentum averages left by
/// training trail the weights by several steps.
pub fn recalibrate_batchnorm(net: &mut MotionPredictionNet<f32>, data: &[MpnSample]) -> Result<()> {
    if data.len() < 2 {
        return Ok(());
    }
    let batch: Vec<&MpnSample> = data.iter().collect();
    let input = stack_crops(&batch)?;
    let saved: Vec<f32> = [&net.bn1, &net.bn2, &net.bn3].iter().map(|bn| bn.momentum).collect();
    for bn in [&mut net.bn1, &mut net.bn2, &mut net.bn3] {
        bn.momentum = 1.0;
    }
    net.set_mode(BnMode::Train);
    let result = net.forward_batch(&input).map(|_| ());
    for (bn, m) in [&mut net.bn1, &mut net.bn2, &mut net.bn3].into_iter().zip(saved) {
        bn.momentum = m;
    }
    net.set_mode(BnMode::Eval);
    result
}

/// Mean L1 error of the net (running statistics) over a dataset.
pub fn evaluate_l1(net: &MotionPredictionNet<f32>, data: &[MpnSample]) -> Result<f32> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation dataset is empty"));
    }
    let mut total = 0.0f64;
    for chunk in data.chunks(256) {
        let batch: Vec<&MpnSample> = chunk.iter().collect();
        let trace = net.forward_eval(&stack_crops(&batch)?)?;
        let targets: Vec<(f32, f32)> = batch.iter().map(|s| (s.gx, s.gy)).collect();
        total += l1_loss(&trace.output, &targets).0 as f64 * batch.len() as f64;
    }
    Ok((total / data.len() as f64) as f32)
}

/// Scale factors from image pixels to flow pixels.
fn flow_scale(flow: &FlowMap, img_size: (u32, u32)) -> (f32, f32) {
    (
        flow.width() as f32 / img_size.0 as f32,
        flow.height() as f32 / img_size.1 as f32,
    )
}

/// Inference-only copy of a motion predictor with each batch norm folded
/// into the convolution before it. Matches `forward_eval` up to float
/// rounding and runs without intermediate tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedMpn {
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
    w3: Vec<f32>,
    b3: Vec<f32>,
    lambda: f32,
}

/// Folds `bn` into `conv`. Weights come back transposed to
/// `[in_ch, kh, kw, out_ch]` so the inner loop runs over output channels.
fn fold(conv: &ConvLayer<f32>, bn: &BatchNormLayer<f32>) -> (Vec<f32>, Vec<f32>) {
    let out = conv.bias.len();
    let per = conv.weight.len() / out;
    let mut w = vec![0.0; conv.weight.len()];
    let mut b = Vec::with_capacity(out);
    for o in 0..out {
        let scale = bn.gamma.data()[o] / (bn.running_var.data()[o] + bn.epsilon).sqrt();
        for k in 0..per {
            w[k * out + o] = conv.weight.data()[o * per + k] * scale;
        }
        b.push((conv.bias.data()[o] - bn.running_mean.data()[o]) * scale + bn.beta.data()[o]);
    }
    (w, b)
}

/// Same-size 3×3 convolution of a `[cin,3,3]` map with zero padding into
/// position-major `[3,3,C]` output.
fn conv3x3_same<const C: usize>(w: &[f32], b: &[f32], input: &[f32], cin: usize, out: &mut [[f32; C]; 9]) {
    for y in 0..3 {
        for x in 0..3 {
            let acc = &mut out[y * 3 + x];
            acc.copy_from_slice(b);
            for i in 0..cin {
                for ky in y.saturating_sub(1)..(y + 2).min(3) {
                    for kx in x.saturating_sub(1)..(x + 2).min(3) {
                        let v = input[i * 9 + ky * 3 + kx];
                        let k = ky + 1 - y;
                        let l = kx + 1 - x;
                        let wk = &w[(i * 9 + k * 3 + l) * C..][..C];
                        for o in 0..C {
                            acc[o] += wk[o] * v;
                        }
                    }
                }
            }
        }
    }
}

impl FoldedMpn {
    pub fn new(net: &MotionPredictionNet<f32>) -> Self {
        let (w1, b1) = fold(&net.conv1, &net.bn1);
        let (w2, b2) = fold(&net.conv2, &net.bn2);
        let (w3, b3) = fold(&net.conv3, &net.bn3);
        FoldedMpn { w1, b1, w2, b2, w3, b3, lambda: net.lambda as f32 }
    }

    /// Offset in flow pixels for one crop laid out as `[2,3,3]`.
    pub fn predict(&self, crop: &[f32; 18]) -> MotionDelta {
        const C: usize = HIDDEN_CHANNELS;
        let l = self.lambda;
        let mut h1 = [[0.0f32; C]; 9];
        conv3x3_same(&self.w1, &self.b1, crop, 2, &mut h1);
        // back to channel-major for the next convolution
        let mut h1c = [0.0f32; C * 9];
        for (p, row) in h1.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                h1c[c * 9 + p] = softshrink(*v, l);
            }
        }
        let mut h2 = [[0.0f32; C]; 9];
        conv3x3_same(&self.w2, &self.b2, &h1c, C, &mut h2);
        let mut acc = [self.b3[0], self.b3[1]];
        for (p, row) in h2.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let h = softshrink(*v + h1c[c * 9 + p], l);
                acc[0] += self.w3[(c * 9 + p) * 2] * h;
                acc[1] += self.w3[(c * 9 + p) * 2 + 1] * h;
            }
        }
        MotionDelta { dx: softshrink(acc[0], l), dy: softshrink(acc[1], l) }
    }

    /// New image-space centers after one frame of motion, each crop taken at
    /// the previous center.
    pub fn predict_positions(&self, centers: &[(f32, f32)], flow: &FlowMap, img_size: (u32, u32)) -> Result<Vec<(f32, f32)>> {
        if img_size.0 == 0 || img_size.1 == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        let (sx, sy) = flow_scale(flow, img_size);
        Ok(centers
            .iter()
            .map(|&(cx, cy)| {
                let crop = crop3x3(flow, cx * sx, cy * sy);
                let m = self.predict(crop.data().try_into().expect("crop is [2,3,3]"));
                (cx + m.dx / sx, cy + m.dy / sy)
            })
            .collect())
    }
}

/// New center of a track: the previous center plus the predicted motion,
/// with the crop taken at the previous center.
pub fn predict_position(
    center: (f32, f32),
    flow: &FlowMap,
    net: &MotionPredictionNet<f32>,
    img_size: (u32, u32),
) -> Result<(f32, f32)> {
    if img_size.0 == 0 || img_size.1 == 0 {
        return Err(Error::invalid("image size must be positive"));
    }
    let (sx, sy) = flow_scale(flow, img_size);
    let crop = crop3x3(flow, center.0 * sx, center.1 * sy);
    let m = net.predict(&crop)?;
    Ok((center.0 + m.dx / sx, center.1 + m.dy / sy))
}

/// `predict_position` for many centers. Folds the net once per call; keep a
/// [`FoldedMpn`] around when predicting every frame.
pub fn predict_positions(
    centers: &[(f32, f32)],
    flow: &FlowMap,
    net: &MotionPredictionNet<f32>,
    img_size: (u32, u32),
) -> Result<Vec<(f32, f32)>> {
    FoldedMpn::new(net).predict_positions(centers, flow, img_size)
}

/// Flow-pixel indices whose centers fall in `[lo, hi)`, clipped to `0..n`.
fn pixel_span(lo: f32, hi: f32, n: usize) -> std::ops::Range<usize> {
    let start = lo.ceil().max(0.0) as usize;
    let end = (hi.ceil().max(0.0) as usize).min(n);
    start.min(end)..end
}

/// Flow pixels covered by an image-space box.
pub fn flow_pixels_in_box(bbox: &BBox, flow: &FlowMap, img_size: (u32, u32)) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let (sx, sy) = flow_scale(flow, img_size);
    (
        pixel_span(bbox.x * sx, bbox.right() * sx, flow.width()),
        pixel_span(bbox.y * sy, bbox.bottom() * sy, flow.height()),
    )
}

/// Average flow inside a box, converted to image pixels. Falls back to the
/// single pixel nearest the box center when no pixel center lies inside.
pub fn mean_of_flow(bbox: &BBox, flow: &FlowMap, img_size: (u32, u32)) -> Result<MotionDelta> {
    if !bbox.is_valid() {
        return Err(Error::invalid(format!("box must have positive extent: {bbox:?}")));
    }
    if img_size.0 == 0 || img_size.1 == 0 {
        return Err(Error::invalid("image size must be positive"));
    }
    let (sx, sy) = flow_scale(flow, img_size);
    let (xs, ys) = flow_pixels_in_box(bbox, flow, img_size);
    let (mut su, mut sv, mut n) = (0.0f64, 0.0f64, 0usize);
    for y in ys {
        for x in xs.clone() {
            let (u, v) = flow.at(x, y);
            su += u as f64;
            sv += v as f64;
            n += 1;
        }
    }
    let (mu, mv) = if n > 0 {
        (su / n as f64, sv / n as f64)
    } else {
        let (cx, cy) = bbox.center();
        let px = round_half_up(cx * sx).clamp(0, flow.width() as isize - 1) as usize;
        let py = round_half_up(cy * sy).clamp(0, flow.height() as isize - 1) as usize;
        let (u, v) = flow.at(px, py);
        (u as f64, v as f64)
    };
    Ok(MotionDelta { dx: (mu / sx as f64) as f32, dy: (mv / sy as f64) as f32 })
}

/// Writes `crops.ftns` (`[N,2,3,3]`) and `targets.csv` (`gx,gy` per line).
pub fn write_mpn_dataset(dir: &Path, samples: &[MpnSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("refusing to write an empty dataset"));
    }
    fs::create_dir_all(dir)?;
    let refs: Vec<&MpnSample> = samples.iter().collect();
    let crops = stack_crops(&refs)?;
    write_ftns(&crops, BufWriter::new(fs::File::create(dir.join("crops.ftns"))?))?;
    let mut csv = String::with_capacity(samples.len() * 16);
    for s in samples {
        csv.push_str(&format!("{},{}\n", s.gx, s.gy));
    }
    fs::write(dir.join("targets.csv"), csv)?;
    Ok(())
}

pub fn read_mpn_dataset(dir: &Path) -> Result<Vec<MpnSample>> {
    let crops = read_ftns(BufReader::new(fs::File::open(dir.join("crops.ftns"))?))?;
    let n = match crops.shape() {
        [n, 2, 3, 3] => *n,
        s => return Err(Error::shape(format!("crops.ftns must be [N,2,3,3], got {s:?}"))),
    };
    let text = fs::read_to_string(dir.join("targets.csv"))?;
    let mut samples = Vec::with_capacity(n);
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = || Error::Parse { line: lineno + 1, message: format!("expected gx,gy, got {line:?}") };
        let (a, b) = line.split_once(',').ok_or_else(parse_err)?;
        let gx: f32 = a.trim().parse().map_err(|_| parse_err())?;
        let gy: f32 = b.trim().parse().map_err(|_| parse_err())?;
        let i = samples.len();
        if i >= n {
            return Err(Error::Parse { line: lineno + 1, message: format!("more targets than the {n} crops") });
        }
        let crop = Tensor::new(&[2, 3, 3], crops.data()[i * 18..(i + 1) * 18].to_vec())?;
        samples.push(MpnSample { crop, gx, gy });
    }
    if samples.len() != n {
        return Err(Error::Format(format!("{n} crops but {} targets", samples.len())));
    }
    Ok(samples)
}
