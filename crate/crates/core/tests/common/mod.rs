#![allow(dead_code)]

use aestylegan::nn::{Bound, ParamSet};
use aestylegan::tensor::{grad, Tensor};
use aestylegan::trainer::{TrainConfig, TrainMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small networks that still exercise every layer type.
pub fn tiny_config(resolution: usize, mode: TrainMode) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.mode = mode;
    c.batch_size = 4;
    c.net.resolution = resolution;
    c.net.base_channels = 4;
    c.net.max_channels = 8;
    c.net.d_z = 8;
    c.net.d_w = 8;
    c.net.n_mapping_layers = 2;
    c
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect(), shape)
}

/// Largest relative error between analytic and central-difference gradients
/// of `loss` over `n` random scalar coordinates of `params`.
pub fn max_grad_error(params: &ParamSet, loss: &dyn Fn(&Bound) -> Tensor, n: usize, seed: u64) -> f64 {
    let bound = params.bind(true);
    let out = loss(&bound);
    let names: Vec<String> = params.names().cloned().collect();
    let leaves: Vec<&Tensor> = names.iter().map(|k| bound.get(k)).collect();
    let grads = grad(&out, &leaves, false);

    let sizes: Vec<usize> = names.iter().map(|k| params.get(k).unwrap().data.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let mut flat = rng.gen_range(0..total);
        let mut k = 0;
        while flat >= sizes[k] {
            flat -= sizes[k];
            k += 1;
        }
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.get_mut(&names[k]).unwrap().data[flat] += delta;
            loss(&p.bind(false)).item()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = grads[k].data()[flat];
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}
