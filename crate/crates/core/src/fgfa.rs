//! Flow-guided feature augmentation.
//!
//! The previous frame's feature map is warped along the flow onto the current
//! frame, concatenated with the current features, and fed to two branches: a
//! 1×1 attention convolution with a sigmoid (one score per position) and a
//! 3×3 fusion convolution with batch norm and ReLU. The block returns
//! `fuse · att + current`, so a closed attention gate leaves the current
//! features untouched.
//!
//! Flow maps hold the displacement from the previous frame to the current
//! one, so the previous feature at current position `p` is read at
//! `p − flow(p)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::{resample_rescale, FlowMap};
use crate::tensor::{
    bilinear_sample, bilinear_sample_backward, Activation, BatchNormGrads, BatchNormLayer,
    ConvGrads, ConvLayer, Real, Tensor,
};

/// One augmentation block for a pyramid stage with `c` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FgfaBlock<T: Real = f32> {
    /// 1×1, `2c → 1`
    pub attention_conv: ConvLayer<T>,
    /// 3×3, padding 1, `2c → c`
    pub fusion_conv: ConvLayer<T>,
    /// `c` channels, used with running statistics.
    pub fusion_bn: BatchNormLayer<T>,
}

/// Gradients of [`augment_backward`].
#[derive(Debug, Clone)]
pub struct FgfaGrads<T: Real = f32> {
    pub prev: Tensor<T>,
    pub cur: Tensor<T>,
    pub attention: ConvGrads<T>,
    pub fusion: ConvGrads<T>,
    pub bn: BatchNormGrads<T>,
}

impl<T: Real> FgfaBlock<T> {
    /// Fan-in uniform weights, zero biases, identity batch norm.
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        FgfaBlock {
            attention_conv: ConvLayer::fan_in_uniform(1, 2 * channels, 1, 1, 0, rng),
            fusion_conv: ConvLayer::fan_in_uniform(channels, 2 * channels, 3, 1, 1, rng),
            fusion_bn: BatchNormLayer::identity(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.fusion_conv.out_channels()
    }

    pub fn cast<U: Real>(&self) -> FgfaBlock<U> {
        FgfaBlock {
            attention_conv: self.attention_conv.cast(),
            fusion_conv: self.fusion_conv.cast(),
            fusion_bn: self.fusion_bn.cast(),
        }
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels();
        let ok = self.attention_conv.out_channels() == 1
            && self.attention_conv.in_channels() == 2 * c
            && self.attention_conv.kernel() == (1, 1)
            && self.fusion_conv.in_channels() == 2 * c
            && self.fusion_conv.kernel() == (3, 3)
            && self.fusion_conv.padding == 1
            && self.fusion_bn.channels() == c;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "inconsistent FGFA block: attention {:?}, fusion {:?}, bn {}",
                self.attention_conv.weight.shape(),
                self.fusion_conv.weight.shape(),
                self.fusion_bn.channels()
            )))
        }
    }
}

fn check_flow(feature: &Tensor<impl Real>, flow: &FlowMap) -> Result<()> {
    let [_, h, w] = feature.dims3("feature map")?;
    if flow.width() != w || flow.height() != h {
        return Err(Error::shape(format!(
            "flow is {}x{} but feature {:?} is {w}x{h}",
            flow.width(),
            flow.height(),
            feature.shape()
        )));
    }
    Ok(())
}

fn flow_components<T: Real>(flow: &FlowMap) -> (Vec<T>, Vec<T>) {
    (
        flow.u().iter().map(|&v| T::lit(v as f64)).collect(),
        flow.v().iter().map(|&v| T::lit(v as f64)).collect(),
    )
}

/// Warp with flow given as per-pixel component slices (`H·W` each).
pub fn warp_with<T: Real>(prev: &Tensor<T>, u: &[T], v: &[T]) -> Result<Tensor<T>> {
    let [c, h, w] = prev.dims3("previous feature")?;
    if u.len() != h * w || v.len() != h * w {
        return Err(Error::shape(format!("flow components do not cover {h}x{w}")));
    }
    let mut out = Tensor::zeros(&[c, h, w]);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = T::lit(x as f64) - u[i];
            let sy = T::lit(y as f64) - v[i];
            for (ch, val) in bilinear_sample(prev, sx, sy).into_iter().enumerate() {
                out.data_mut()[(ch * h + y) * w + x] = val;
            }
        }
    }
    Ok(out)
}

/// Backward of [`warp_with`]: gradients for the previous feature map and
/// for both flow components.
pub fn warp_backward<T: Real>(
    prev: &Tensor<T>,
    u: &[T],
    v: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    grad_out.expect_same_shape(prev)?;
    let [c, h, w] = prev.dims3("previous feature")?;
    let mut grad_prev = Tensor::zeros(&[c, h, w]);
    let mut gu = vec![T::zero(); h * w];
    let mut gv = vec![T::zero(); h * w];
    let mut g = vec![T::zero(); c];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for (ch, gc) in g.iter_mut().enumerate() {
                *gc = grad_out.data()[(ch * h + y) * w + x];
            }
            let sx = T::lit(x as f64) - u[i];
            let sy = T::lit(y as f64) - v[i];
            let (gx, gy) = bilinear_sample_backward(prev, sx, sy, &g, &mut grad_prev);
            gu[i] = -gx;
            gv[i] = -gy;
        }
    }
    Ok((grad_prev, gu, gv))
}

/// Samples the previous feature map `[C,H,W]` along a flow map of the same
/// spatial size. Samples falling outside the map read zero.
pub fn warp_previous<T: Real>(prev: &Tensor<T>, flow: &FlowMap) -> Result<Tensor<T>> {
    check_flow(prev, flow)?;
    let (u, v) = flow_components::<T>(flow);
    warp_with(prev, &u, &v)
}

/// The ablation baseline: the warped previous features replace the current
/// ones outright.
pub fn naive_feature_warp<T: Real>(prev: &Tensor<T>, cur: &Tensor<T>, flow: &FlowMap) -> Result<Tensor<T>> {
    prev.expect_same_shape(cur)?;
    warp_previous(prev, flow)
}

/// Intermediate values of one augmentation pass.
#[derive(Debug, Clone)]
pub struct FgfaTrace<T: Real = f32> {
    pub sample: Tensor<T>,
    pub concat: Tensor<T>,
    /// attention logits, `[1,1,H,W]`
    pub att_logits: Tensor<T>,
    /// sigmoid of the logits, `[1,1,H,W]`
    pub att: Tensor<T>,
    /// fusion conv output before batch norm, `[1,C,H,W]`
    pub fuse_conv: Tensor<T>,
    /// after batch norm, before ReLU
    pub fuse_bn: Tensor<T>,
    pub fuse: Tensor<T>,
    pub bn_cache: crate::tensor::BatchNormCache<T>,
    pub output: Tensor<T>,
}

fn as_batch<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = t.dims3("feature map")?;
    t.clone().reshape(&[1, c, h, w])
}

/// Forward pass keeping every intermediate, given the warped sample.
pub fn augment_from_sample<T: Real>(
    sample: Tensor<T>,
    cur: &Tensor<T>,
    block: &FgfaBlock<T>,
) -> Result<FgfaTrace<T>> {
    block.validate()?;
    sample.expect_same_shape(cur)?;
    let [c, h, w] = cur.dims3("current feature")?;
    if c != block.channels() {
        return Err(Error::shape(format!(
            "feature has {c} channels, block expects {}",
            block.channels()
        )));
    }
    let concat = Tensor::concat_channels(&[&sample, cur])?;
    let z = as_batch(&concat)?;
    let att_logits = block.attention_conv.forward(&z)?;
    let att = Activation::Sigmoid.forward(&att_logits);
    let fuse_conv = block.fusion_conv.forward(&z)?;
    let (fuse_bn, bn_cache) = block.fusion_bn.forward_eval(&fuse_conv)?;
    let fuse = Activation::Relu.forward(&fuse_bn);

    let plane = h * w;
    let mut out = cur.clone();
    for ch in 0..c {
        for i in 0..plane {
            let k = ch * plane + i;
            out.data_mut()[k] += fuse.data()[k] * att.data()[i];
        }
    }
    Ok(FgfaTrace { sample, concat, att_logits, att, fuse_conv, fuse_bn, fuse, bn_cache, output: out })
}

/// Augments the current features with the flow-warped previous features.
pub fn augment<T: Real>(
    prev: &Tensor<T>,
    cur: &Tensor<T>,
    flow: &FlowMap,
    block: &FgfaBlock<T>,
) -> Result<Tensor<T>> {
    prev.expect_same_shape(cur)?;
    let sample = warp_previous(prev, flow)?;
    Ok(augment_from_sample(sample, cur, block)?.output)
}

/// Full trace including the warp, for callers that need the backward pass.
pub fn augment_trace<T: Real>(
    prev: &Tensor<T>,
    cur: &Tensor<T>,
    u: &[T],
    v: &[T],
    block: &FgfaBlock<T>,
) -> Result<FgfaTrace<T>> {
    prev.expect_same_shape(cur)?;
    let sample = warp_with(prev, u, v)?;
    augment_from_sample(sample, cur, block)
}

/// Backward through warp, both branches and the residual.
pub fn augment_backward<T: Real>(
    prev: &Tensor<T>,
    u: &[T],
    v: &[T],
    block: &FgfaBlock<T>,
    trace: &FgfaTrace<T>,
    grad_out: &Tensor<T>,
) -> Result<FgfaGrads<T>> {
    grad_out.expect_same_shape(&trace.output)?;
    let [c, h, w] = grad_out.dims3("grad_out")?;
    let plane = h * w;

    let mut grad_fuse = Tensor::zeros(&[1, c, h, w]);
    let mut grad_att = Tensor::zeros(&[1, 1, h, w]);
    for ch in 0..c {
        for i in 0..plane {
            let k = ch * plane + i;
            let g = grad_out.data()[k];
            grad_fuse.data_mut()[k] = g * trace.att.data()[i];
            grad_att.data_mut()[i] += g * trace.fuse.data()[k];
        }
    }
    let grad_logits = Activation::Sigmoid.backward(&trace.att_logits, &grad_att)?;
    let grad_bn_out = Activation::Relu.backward(&trace.fuse_bn, &grad_fuse)?;
    let bn = block.fusion_bn.backward(&trace.bn_cache, &grad_bn_out)?;

    let z = as_batch(&trace.concat)?;
    let attention = block.attention_conv.backward(&z, &grad_logits)?;
    let fusion = block.fusion_conv.backward(&z, &bn.input)?;
    let grad_z = attention.input.add(&fusion.input)?.reshape(&[2 * c, h, w])?;
    let (grad_sample, grad_cur_branch) = grad_z.split_channels(c)?;
    let cur = grad_cur_branch.add(grad_out)?;
    let (prev_grad, _, _) = warp_backward(prev, u, v, &grad_sample)?;
    Ok(FgfaGrads { prev: prev_grad, cur, attention, fusion, bn })
}

/// Runs one block per pyramid stage, resampling the full-resolution flow to
/// each stage's size first.
pub fn augment_pyramid<T: Real>(
    prev_stages: &[Tensor<T>],
    cur_stages: &[Tensor<T>],
    flow_full: &FlowMap,
    blocks: &[FgfaBlock<T>],
) -> Result<Vec<Tensor<T>>> {
    if prev_stages.len() != cur_stages.len() || cur_stages.len() != blocks.len() || blocks.is_empty() {
        return Err(Error::shape(format!(
            "stage counts differ: {} previous, {} current, {} blocks",
            prev_stages.len(),
            cur_stages.len(),
            blocks.len()
        )));
    }
    let mut last: Option<(usize, usize)> = None;
    let mut out = Vec::with_capacity(cur_stages.len());
    for ((prev, cur), block) in prev_stages.iter().zip(cur_stages).zip(blocks) {
        let [_, h, w] = cur.dims3("stage feature")?;
        if let Some((lh, lw)) = last {
            if h >= lh || w >= lw {
                return Err(Error::shape(format!(
                    "stage sizes must strictly decrease, got {lh}x{lw} then {h}x{w}"
                )));
            }
        }
        last = Some((h, w));
        let stage_flow = resample_rescale(flow_full, w, h)?;
        out.push(augment(prev, cur, &stage_flow, block)?);
    }
    Ok(out)
}
