//! Perceptual feature networks `h`.
//!
//! The built-in extractor is a small convolutional stack with fixed random
//! weights drawn from a seed. It stands in for a pretrained perceptual network:
//! every number it produces is only comparable to numbers from the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::layers::EqualConv2d;
use crate::nn::{Bound, ParamSet};
use crate::tensor::Tensor;

/// A differentiable image embedding.
pub trait FeatureNet {
    /// Dense perceptual features `[n, d]`, used for distances between images.
    fn features(&self, x: &Tensor) -> Tensor;

    /// Compact embedding `[n, d_f]` for Fréchet statistics.
    fn embed(&self, x: &Tensor) -> Tensor {
        self.features(x)
    }

    /// Short identifier recorded next to every reported number.
    fn name(&self) -> String;
}

/// Per-sample mean squared feature difference, shape `[n]`.
pub fn perceptual_distance(h: &dyn FeatureNet, a: &Tensor, b: &Tensor) -> Tensor {
    let fa = h.features(a);
    let fb = h.features(b);
    let n = fa.dim(0);
    let d = fa.dim(1);
    fa.sub(&fb).square().sum_keepdim(&[1]).reshape(&[n]).scale(1.0 / d as f64)
}

/// Fixed-seed random convolutional feature extractor.
#[derive(Debug, Clone)]
pub struct RandomConvFeatures {
    seed: u64,
    convs: Vec<EqualConv2d>,
    bound: ParamSet,
}

impl RandomConvFeatures {
    pub const WIDTHS: [usize; 3] = [8, 16, 32];

    pub fn new(img_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let mut convs = Vec::new();
        let mut cin = img_channels;
        for (i, &w) in Self::WIDTHS.iter().enumerate() {
            let conv = EqualConv2d::new(format!("h.{i}"), cin, w, 3);
            conv.init(&mut ps, &mut rng);
            convs.push(conv);
            cin = w;
        }
        // Random biases so ReLU-like units are not all centred on zero.
        for (name, p) in ps.iter_mut() {
            if name.ends_with(".bias") {
                for (k, v) in p.data.iter_mut().enumerate() {
                    *v = 0.1 * ((k * 7 % 5) as f64 - 2.0);
                }
            }
        }
        Self { seed, convs, bound: ps }
    }

    fn params(&self) -> Bound {
        self.bound.bind(false)
    }

    /// Activations of every stage, in order.
    fn stages(&self, x: &Tensor) -> Vec<Tensor> {
        let p = self.params();
        let mut out = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            if i > 0 && h.dim(2) >= 2 && h.dim(2) % 2 == 0 {
                h = h.avg_pool2x();
            }
            h = conv.forward(&p, &h);
            out.push(h.clone());
        }
        out
    }
}

impl FeatureNet for RandomConvFeatures {
    fn features(&self, x: &Tensor) -> Tensor {
        let n = x.dim(0);
        let parts: Vec<Tensor> = self
            .stages(x)
            .into_iter()
            .map(|s| {
                let per = s.numel() / n;
                // equal weight per stage regardless of its size
                s.reshape(&[n, per]).scale(1.0 / (per as f64).sqrt())
            })
            .collect();
        let total: usize = parts.iter().map(|p| p.dim(1)).sum();
        let k = parts.len() as f64;
        Tensor::cat(&parts, 1).scale((total as f64 / k).sqrt())
    }

    fn embed(&self, x: &Tensor) -> Tensor {
        let n = x.dim(0);
        let parts: Vec<Tensor> = self
            .stages(x)
            .into_iter()
            .map(|s| {
                let c = s.dim(1);
                s.mean_keepdim(&[2, 3]).reshape(&[n, c])
            })
            .collect();
        Tensor::cat(&parts, 1)
    }

    fn name(&self) -> String {
        format!("random-conv(seed={})", self.seed)
    }
}
