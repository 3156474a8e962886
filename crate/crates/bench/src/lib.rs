//! Inputs shared by the benchmarks.

use flowtrack::fgmp::{train_mpn, MotionPredictionNet, TrainConfig};
use flowtrack::synthetic::{generate_benchmark_scene, generate_mpn_dataset, BenchmarkShape, MraLevel, Scene};
use flowtrack::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A high-MRA benchmark scene with `objects` objects over 100 frames.
pub fn scene(objects: usize) -> Scene {
    let shape = BenchmarkShape { objects, ..Default::default() };
    generate_benchmark_scene(1, MraLevel::High, &shape).expect("benchmark scene").1
}

/// Weights fitted briefly to crops from a separate benchmark scene. Random
/// weights cost the same per prediction but scatter the tracks, which
/// inflates the track count and with it the per-frame work.
pub fn net() -> MotionPredictionNet<f32> {
    let (_, source) = generate_benchmark_scene(10_000, MraLevel::High, &BenchmarkShape::default()).expect("benchmark scene");
    let data = generate_mpn_dataset(&source, 1000, 0.0, 0).expect("training crops");
    let mut net = MotionPredictionNet::new(&mut ChaCha8Rng::seed_from_u64(0));
    let cfg = TrainConfig { epochs: 40, average_epochs: 10, ..Default::default() };
    train_mpn(&mut net, &data, &cfg).expect("training");
    net
}

pub fn cost_matrix(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

pub fn feature(channels: usize, h: usize, w: usize) -> Tensor<f32> {
    Tensor::random_uniform(&[channels, h, w], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2))
}
