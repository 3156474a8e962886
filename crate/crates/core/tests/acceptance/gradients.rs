//! Analytic backward passes against central finite differences, 100 seeded
//! random cases per layer.

use std::time::Instant;

use flowtrack::fgfa::{augment_backward, augment_trace, warp_backward, warp_with, FgfaBlock};
use flowtrack::fgmp::{l1_loss, MotionPredictionNet};
use flowtrack::tensor::{
    finite_difference_check, Activation, BatchNormLayer, BnMode, ConvLayer, GradCheckReport, Probe,
    MAX_SKIPPED_FRACTION,
};
use flowtrack::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const TRIALS: u64 = 100;

type T64 = Tensor<f64>;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> T64 {
    Tensor::random_uniform(shape, -1.0, 1.0, rng)
}

fn flatten(parts: &[&T64]) -> Vec<f64> {
    parts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Writes `values` back into tensors shaped like `like`.
fn unflatten(values: &[f64], like: &[&T64]) -> Vec<T64> {
    let mut rest = values;
    like.iter()
        .map(|t| {
            let (head, tail) = rest.split_at(t.len());
            rest = tail;
            Tensor::new(t.shape(), head.to_vec()).unwrap()
        })
        .collect()
}

fn dot(a: &T64, b: &T64) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// One line per layer: worst error and how many coordinates were checked or
/// skipped at kinks. Fails on any trial over tolerance, any trial with
/// nothing checked, or a suite-wide kink budget overrun.
fn summarize(name: &str, reports: &[GradCheckReport]) -> Result<String, String> {
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    let skipped: usize = reports.iter().map(|r| r.skipped).sum();
    let checked: usize = reports.iter().map(|r| r.checked).sum();
    let failed: Vec<usize> = reports
        .iter()
        .enumerate()
        .filter(|(_, r)| !(r.max_relative_error <= TOL) || r.checked == 0)
        .map(|(i, _)| i)
        .collect();
    // The kink budget applies to the whole suite; a single small trial can
    // exceed it by chance when a bias shift moves every unit at once.
    let fraction = skipped as f64 / (skipped + checked).max(1) as f64;
    let line = format!(
        "{name}: {} trials, worst {worst:.2e}, {checked} checked, {skipped} skipped ({:.1}%)",
        reports.len(),
        fraction * 100.0
    );
    if !failed.is_empty() {
        return Err(format!("{line}; trials {failed:?} over {TOL:e}"));
    }
    if fraction > MAX_SKIPPED_FRACTION {
        return Err(format!("{line}; kink budget exceeded"));
    }
    Ok(line)
}

/// Runs every layer's check; the error lists the failing layers.
pub fn run_suite() -> (Vec<Result<String, String>>, f64) {
    let start = Instant::now();
    let mut results = vec![
        summarize("conv2d", &conv2d()),
        summarize("batchnorm/train", &batchnorm(BnMode::Train)),
        summarize("batchnorm/eval", &batchnorm(BnMode::Eval)),
    ];
    for (kind, reports) in activations() {
        results.push(summarize(&format!("{kind:?}"), &reports));
    }
    results.push(summarize("bilinear warp", &bilinear_warp()));
    results.push(summarize("motion predictor + L1", &motion_predictor()));
    results.push(summarize("fgfa block", &fgfa_block()));
    (results, start.elapsed().as_secs_f64())
}

fn conv2d() -> Vec<GradCheckReport> {
    (0..TRIALS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stride = 1 + (seed % 2) as usize;
            let layer = ConvLayer::<f64>::new(rand_tensor(&[3, 2, 3, 3], &mut rng), rand_tensor(&[3], &mut rng), stride, 1)
                .unwrap();
            let x = rand_tensor(&[1, 2, 4, 4], &mut rng);
            let out_shape = layer.forward(&x).unwrap().shape().to_vec();
            let readout = rand_tensor(&out_shape, &mut rng);
            let g = layer.backward(&x, &readout).unwrap();
            let like = [&x, &layer.weight, &layer.bias];
            let analytic = flatten(&[&g.input, &g.weight, &g.bias]);
            finite_difference_check(
                |p| {
                    let t = unflatten(p, &like);
                    let l = ConvLayer::new(t[1].clone(), t[2].clone(), stride, 1).unwrap();
                    Probe::smooth(dot(&l.forward(&t[0]).unwrap(), &readout))
                },
                &flatten(&like),
                &analytic,
                TOL,
            )
        })
        .collect()
}

fn bn_case(seed: u64, mode: BnMode) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bn = BatchNormLayer::<f64>::identity(3);
    bn.gamma = rand_tensor(&[3], &mut rng);
    bn.beta = rand_tensor(&[3], &mut rng);
    bn.running_mean = rand_tensor(&[3], &mut rng);
    bn.running_var = Tensor::random_uniform(&[3], 0.5, 2.0, &mut rng);
    bn.mode = mode;
    let x = rand_tensor(&[2, 3, 2, 2], &mut rng);
    let readout = rand_tensor(x.shape(), &mut rng);
    let (_, cache) = bn.clone().forward(&x).unwrap();
    let g = bn.backward(&cache, &readout).unwrap();
    let like = [&x, &bn.gamma, &bn.beta];
    finite_difference_check(
        |p| {
            let t = unflatten(p, &like);
            let mut l = bn.clone();
            l.gamma = t[1].clone();
            l.beta = t[2].clone();
            Probe::smooth(dot(&l.forward(&t[0]).unwrap().0, &readout))
        },
        &flatten(&like),
        &flatten(&[&g.input, &g.gamma, &g.beta]),
        TOL,
    )
}

fn batchnorm(mode: BnMode) -> Vec<GradCheckReport> {
    (0..TRIALS).map(|s| bn_case(s, mode)).collect()
}

fn activations() -> Vec<(Activation, Vec<GradCheckReport>)> {
    let mut out = Vec::new();
    for kind in [Activation::Relu, Activation::Sigmoid, Activation::Softshrink(0.5)] {
        let reports: Vec<_> = (0..TRIALS)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = rand_tensor(&[24], &mut rng);
                let readout = rand_tensor(&[24], &mut rng);
                let g = kind.backward(&x, &readout).unwrap();
                finite_difference_check(
                    |p| {
                        let t = Tensor::new(&[24], p.to_vec()).unwrap();
                        Probe {
                            value: dot(&kind.forward(&t), &readout),
                            branches: t.data().iter().map(|&v| kind.branch(v)).collect(),
                        }
                    },
                    x.data(),
                    g.data(),
                    TOL,
                )
            })
            .collect();
        out.push((kind, reports));
    }
    out
}

fn bilinear_warp() -> Vec<GradCheckReport> {
    let (c, h, w) = (2, 5, 5);
    (0..TRIALS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let feat = rand_tensor(&[c, h, w], &mut rng);
            let u = Tensor::<f64>::random_uniform(&[h * w], -2.0, 2.0, &mut rng);
            let v = Tensor::<f64>::random_uniform(&[h * w], -2.0, 2.0, &mut rng);
            let readout = rand_tensor(&[c, h, w], &mut rng);
            let (gf, gu, gv) = warp_backward(&feat, u.data(), v.data(), &readout).unwrap();
            let like = [&feat, &u, &v];
            let mut analytic = flatten(&[&gf]);
            analytic.extend(gu);
            analytic.extend(gv);
            finite_difference_check(
                |p| {
                    let t = unflatten(p, &like);
                    let out = warp_with(&t[0], t[1].data(), t[2].data()).unwrap();
                    // sampling cell of every pixel; changes when a coordinate crosses an integer
                    let branches = (0..h * w)
                        .flat_map(|i| {
                            let sx = (i % w) as f64 - t[1].data()[i];
                            let sy = (i / w) as f64 - t[2].data()[i];
                            [sx.floor() as i8, sy.floor() as i8]
                        })
                        .collect();
                    Probe { value: dot(&out, &readout), branches }
                },
                &flatten(&like),
                &analytic,
                TOL,
            )
        })
        .collect()
}

fn motion_predictor() -> Vec<GradCheckReport> {
    let batch = 2;
    (0..TRIALS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = MotionPredictionNet::<f64>::new(&mut rng);
            for bn in [&mut net.bn1, &mut net.bn2, &mut net.bn3] {
                bn.gamma = Tensor::random_uniform(bn.gamma.shape(), 0.5, 1.5, &mut rng);
                bn.beta = rand_tensor(bn.beta.shape(), &mut rng);
                bn.running_mean = Tensor::random_uniform(bn.beta.shape(), -0.5, 0.5, &mut rng);
                bn.running_var = Tensor::random_uniform(bn.beta.shape(), 0.5, 2.0, &mut rng);
            }
            // Batch statistics couple every crop, so in train mode nearly any
            // perturbation flips some softshrink branch; train-mode BN is
            // covered on its own above.
            net.set_mode(BnMode::Eval);
            let crops = rand_tensor(&[batch, 2, 3, 3], &mut rng);
            let targets: Vec<(f64, f64)> =
                (0..batch).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();

            let trace = net.clone().forward_batch(&crops).unwrap();
            let (_, grad_out, _) = l1_loss(&trace.output, &targets);
            let grads = net.backward(&trace, &grad_out).unwrap();
            let mut analytic = flatten(&grads.tensors.iter().collect::<Vec<_>>());
            analytic.extend_from_slice(grads.input.data());
            let mut params = net.flat_parameters();
            let n_net = params.len();
            params.extend_from_slice(crops.data());

            finite_difference_check(
                |p| {
                    let mut m = net.clone();
                    m.set_flat_parameters(&p[..n_net]).unwrap();
                    let x = Tensor::new(crops.shape(), p[n_net..].to_vec()).unwrap();
                    let tr = m.forward_batch(&x).unwrap();
                    let (loss, _, signs) = l1_loss(&tr.output, &targets);
                    let mut branches = tr.branches(m.lambda);
                    branches.extend(signs);
                    Probe { value: loss, branches }
                },
                &params,
                &analytic,
                TOL,
            )
        })
        .collect()
}

fn fgfa_block() -> Vec<GradCheckReport> {
    let (c, h, w) = (2, 4, 5);
    (0..TRIALS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut block = FgfaBlock::<f64>::new(c, &mut rng);
            block.attention_conv.bias = rand_tensor(&[1], &mut rng);
            block.fusion_conv.bias = rand_tensor(&[c], &mut rng);
            block.fusion_bn.gamma = Tensor::random_uniform(&[c], 0.5, 1.5, &mut rng);
            block.fusion_bn.beta = rand_tensor(&[c], &mut rng);
            block.fusion_bn.running_mean = rand_tensor(&[c], &mut rng);
            block.fusion_bn.running_var = Tensor::random_uniform(&[c], 0.5, 2.0, &mut rng);
            let prev = rand_tensor(&[c, h, w], &mut rng);
            let cur = rand_tensor(&[c, h, w], &mut rng);
            let u: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.5..1.5)).collect();
            let v: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.5..1.5)).collect();
            let readout = rand_tensor(&[c, h, w], &mut rng);

            let trace = augment_trace(&prev, &cur, &u, &v, &block).unwrap();
            let g = augment_backward(&prev, &u, &v, &block, &trace, &readout).unwrap();
            let like = [
                &prev,
                &cur,
                &block.attention_conv.weight,
                &block.attention_conv.bias,
                &block.fusion_conv.weight,
                &block.fusion_conv.bias,
                &block.fusion_bn.gamma,
                &block.fusion_bn.beta,
            ];
            let analytic = flatten(&[
                &g.prev,
                &g.cur,
                &g.attention.weight,
                &g.attention.bias,
                &g.fusion.weight,
                &g.fusion.bias,
                &g.bn.gamma,
                &g.bn.beta,
            ]);
            finite_difference_check(
                |p| {
                    let t = unflatten(p, &like);
                    let mut b = block.clone();
                    b.attention_conv.weight = t[2].clone();
                    b.attention_conv.bias = t[3].clone();
                    b.fusion_conv.weight = t[4].clone();
                    b.fusion_conv.bias = t[5].clone();
                    b.fusion_bn.gamma = t[6].clone();
                    b.fusion_bn.beta = t[7].clone();
                    let tr = augment_trace(&t[0], &t[1], &u, &v, &b).unwrap();
                    Probe {
                        value: dot(&tr.output, &readout),
                        branches: tr.fuse_bn.data().iter().map(|&x| Activation::Relu.branch(x)).collect(),
                    }
                },
                &flatten(&like),
                &analytic,
                TOL,
            )
        })
        .collect()
}
