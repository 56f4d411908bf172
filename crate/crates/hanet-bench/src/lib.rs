//! Shared fixtures for the benchmark targets.

use hanet_core::seed::stream_rng;
use hanet_core::tensor::{Shape, Tensor};
use rand::Rng;

/// Deterministic uniform tensor in [-1, 1).
pub fn bench_tensor(seed: u64, shape: Shape) -> Tensor {
    let mut rng = stream_rng(seed, "bench");
    let data = (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Deterministic head positions on a w x h frame.
pub fn bench_points(seed: u64, n: usize, w: usize, h: usize) -> Vec<(f64, f64)> {
    let mut rng = stream_rng(seed, "bench-points");
    (0..n)
        .map(|_| (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)))
        .collect()
}
