//! Shared fixtures for the benchmarks.

use aestylegan::trainer::{TrainConfig, TrainMode};
use aestylegan::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use aestylegan;

/// Uniform values in [-1, 1).
pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape)
}

/// The small network used by the ablation runs.
pub fn small_config(resolution: usize, mode: TrainMode, e_steps: usize) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.mode = mode;
    c.e_steps_per_g_step = e_steps;
    c.batch_size = 4;
    c.net.resolution = resolution;
    c.net.base_channels = 4;
    c.net.max_channels = 16;
    c.net.d_z = 32;
    c.net.d_w = 32;
    c.net.n_mapping_layers = 4;
    c
}
