//! Equalized-learning-rate building blocks of the StyleGAN2 backbone.
//!
//! Weights are stored as unit normals and rescaled by `1/sqrt(fan_in)` at
//! runtime.

use rand::Rng;

use super::params::{Bound, ParamArray, ParamSet};
use crate::tensor::Tensor;

const LRELU_SLOPE: f64 = 0.2;

/// Leaky ReLU followed by the `sqrt(2)` gain used throughout the backbone.
pub fn fused_lrelu(x: &Tensor) -> Tensor {
    x.leaky_relu(LRELU_SLOPE).scale(std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone)]
pub struct EqualLinear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub lr_mul: f64,
    pub bias_init: f64,
    pub activate: bool,
}

impl EqualLinear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self { name: name.into(), in_dim, out_dim, lr_mul: 1.0, bias_init: 0.0, activate: false }
    }

    pub fn lr_mul(mut self, lr_mul: f64) -> Self {
        self.lr_mul = lr_mul;
        self
    }

    pub fn bias_init(mut self, v: f64) -> Self {
        self.bias_init = v;
        self
    }

    pub fn activate(mut self, on: bool) -> Self {
        self.activate = on;
        self
    }

    fn scale(&self) -> f64 {
        self.lr_mul / (self.in_dim as f64).sqrt()
    }

    pub fn init(&self, ps: &mut ParamSet, rng: &mut impl Rng) {
        ps.insert(
            format!("{}.weight", self.name),
            ParamArray::randn(&[self.out_dim, self.in_dim], 1.0 / self.lr_mul, rng),
        );
        ps.insert(format!("{}.bias", self.name), ParamArray::full(&[self.out_dim], self.bias_init / self.lr_mul));
    }

    /// Runtime weight `[out, in]` after the equalized-LR scale.
    pub fn effective_weight(&self, b: &Bound) -> Tensor {
        b.get(&format!("{}.weight", self.name)).scale(self.scale())
    }

    pub fn forward(&self, b: &Bound, x: &Tensor) -> Tensor {
        let w = self.effective_weight(b);
        let bias = b.get(&format!("{}.bias", self.name)).scale(self.lr_mul);
        let y = x.matmul_t(&w, false, true).add(&bias.reshape(&[1, self.out_dim]));
        if self.activate {
            fused_lrelu(&y)
        } else {
            y
        }
    }
}

#[derive(Debug, Clone)]
pub struct EqualConv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub bias: bool,
    pub activate: bool,
}

impl EqualConv2d {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self { name: name.into(), in_ch, out_ch, kernel, bias: true, activate: true }
    }

    pub fn linear(mut self) -> Self {
        self.activate = false;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn init(&self, ps: &mut ParamSet, rng: &mut impl Rng) {
        let k = self.kernel;
        ps.insert(format!("{}.weight", self.name), ParamArray::randn(&[self.out_ch, self.in_ch, k, k], 1.0, rng));
        if self.bias {
            ps.insert(format!("{}.bias", self.name), ParamArray::zeros(&[self.out_ch]));
        }
    }

    pub fn forward(&self, b: &Bound, x: &Tensor) -> Tensor {
        let scale = 1.0 / ((self.in_ch * self.kernel * self.kernel) as f64).sqrt();
        let w = b.get(&format!("{}.weight", self.name)).scale(scale);
        let mut y = x.conv2d(&w);
        if self.bias {
            y = y.add(&b.get(&format!("{}.bias", self.name)).reshape(&[1, self.out_ch, 1, 1]));
        }
        if self.activate {
            fused_lrelu(&y)
        } else {
            y
        }
    }
}

/// Style-modulated convolution in its non-fused form: scale the input per
/// channel, convolve with the shared kernel, then rescale each output channel
/// by the demodulation coefficient. Equivalent to per-sample weights.
#[derive(Debug, Clone)]
pub struct ModulatedConv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub demodulate: bool,
    modulation: EqualLinear,
}

impl ModulatedConv2d {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize, d_w: usize, demodulate: bool) -> Self {
        let name = name.into();
        let modulation = EqualLinear::new(format!("{name}.modulation"), d_w, in_ch).bias_init(1.0);
        Self { name, in_ch, out_ch, kernel, demodulate, modulation }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn init(&self, ps: &mut ParamSet, rng: &mut impl Rng) {
        let k = self.kernel;
        ps.insert(self.weight_name(), ParamArray::randn(&[self.out_ch, self.in_ch, k, k], 1.0, rng));
        self.modulation.init(ps, rng);
    }

    pub fn forward(&self, b: &Bound, x: &Tensor, style: &Tensor) -> Tensor {
        let n = x.dim(0);
        let s = self.modulation.forward(b, style);
        let scale = 1.0 / ((self.in_ch * self.kernel * self.kernel) as f64).sqrt();
        let w = b.get(&self.weight_name()).scale(scale);
        let y = x.mul(&s.reshape(&[n, self.in_ch, 1, 1])).conv2d(&w);
        if !self.demodulate {
            return y;
        }
        let wsq = w.square().sum_keepdim(&[2, 3]).reshape(&[self.out_ch, self.in_ch]);
        let demod = s.square().matmul_t(&wsq, false, true).add_scalar(1e-8).powf(-0.5);
        y.mul(&demod.reshape(&[n, self.out_ch, 1, 1]))
    }
}

/// Modulated conv + optional noise + bias + activation.
#[derive(Debug, Clone)]
pub struct StyledConv {
    pub conv: ModulatedConv2d,
    pub upsample: bool,
    pub noise: bool,
}

impl StyledConv {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, d_w: usize, upsample: bool, noise: bool) -> Self {
        Self { conv: ModulatedConv2d::new(name, in_ch, out_ch, 3, d_w, true), upsample, noise }
    }

    pub fn init(&self, ps: &mut ParamSet, rng: &mut impl Rng) {
        self.conv.init(ps, rng);
        ps.insert(format!("{}.bias", self.conv.name), ParamArray::zeros(&[self.conv.out_ch]));
        if self.noise {
            ps.insert(format!("{}.noise_strength", self.conv.name), ParamArray::zeros(&[1]));
        }
    }

    pub fn forward(&self, b: &Bound, x: &Tensor, style: &Tensor, noise: Option<&Tensor>) -> Tensor {
        let x = if self.upsample { x.upsample2x() } else { x.clone() };
        let mut y = self.conv.forward(b, &x, style);
        if let (true, Some(noise)) = (self.noise, noise) {
            let strength = b.get(&format!("{}.noise_strength", self.conv.name));
            y = y.add(&noise.mul(strength));
        }
        let bias = b.get(&format!("{}.bias", self.conv.name)).reshape(&[1, self.conv.out_ch, 1, 1]);
        fused_lrelu(&y.add(&bias))
    }
}

/// 1x1 modulated projection to image channels, without demodulation.
#[derive(Debug, Clone)]
pub struct ToRgb {
    pub conv: ModulatedConv2d,
}

impl ToRgb {
    pub fn new(name: impl Into<String>, in_ch: usize, img_channels: usize, d_w: usize) -> Self {
        Self { conv: ModulatedConv2d::new(name, in_ch, img_channels, 1, d_w, false) }
    }

    pub fn init(&self, ps: &mut ParamSet, rng: &mut impl Rng) {
        self.conv.init(ps, rng);
        ps.insert(format!("{}.bias", self.conv.name), ParamArray::zeros(&[self.conv.out_ch]));
    }

    pub fn forward(&self, b: &Bound, x: &Tensor, style: &Tensor) -> Tensor {
        let y = self.conv.forward(b, x, style);
        y.add(&b.get(&format!("{}.bias", self.conv.name)).reshape(&[1, self.conv.out_ch, 1, 1]))
    }
}
