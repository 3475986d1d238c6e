use rand::Rng;

use super::config::{LatentSpace, NetConfig};
use super::latent::Style;
use super::layers::{EqualConv2d, EqualLinear};
use super::params::{Bound, ParamSet};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: EqualConv2d,
    conv2: EqualConv2d,
    skip: EqualConv2d,
}

impl ResBlock {
    fn new(i: usize, cin: usize, cout: usize) -> Self {
        Self {
            conv1: EqualConv2d::new(format!("block.{i}.conv1"), cin, cin, 3),
            conv2: EqualConv2d::new(format!("block.{i}.conv2"), cin, cout, 3),
            skip: EqualConv2d::new(format!("block.{i}.skip"), cin, cout, 1).no_bias().linear(),
        }
    }

    fn init(&self, ps: &mut ParamSet, rng: &mut impl Rng) {
        self.conv1.init(ps, rng);
        self.conv2.init(ps, rng);
        self.skip.init(ps, rng);
    }

    fn forward(&self, p: &Bound, x: &Tensor) -> Tensor {
        let main = self.conv2.forward(p, &self.conv1.forward(p, x).avg_pool2x());
        let skip = self.skip.forward(p, &x.avg_pool2x());
        main.add(&skip).scale(std::f64::consts::FRAC_1_SQRT_2)
    }
}

/// Residual downsampling stack shared by the discriminator and the encoder.
#[derive(Debug, Clone)]
struct Backbone {
    cfg: NetConfig,
    mbstd: bool,
    from_rgb: EqualConv2d,
    blocks: Vec<ResBlock>,
    final_conv: EqualConv2d,
    final_linear: EqualLinear,
    out: EqualLinear,
}

impl Backbone {
    fn new(cfg: &NetConfig, mbstd: bool, out_dim: usize) -> Self {
        let from_rgb = EqualConv2d::new("from_rgb", cfg.img_channels, cfg.channels_at(cfg.resolution), 1);
        let mut blocks = Vec::new();
        let mut res = cfg.resolution;
        while res > 4 {
            blocks.push(ResBlock::new(blocks.len(), cfg.channels_at(res), cfg.channels_at(res / 2)));
            res /= 2;
        }
        let c4 = cfg.channels_at(4);
        let final_in = if mbstd { c4 + 1 } else { c4 };
        Self {
            cfg: cfg.clone(),
            mbstd,
            from_rgb,
            blocks,
            final_conv: EqualConv2d::new("final_conv", final_in, c4, 3),
            final_linear: EqualLinear::new("final_linear", c4 * 16, c4).activate(true),
            out: EqualLinear::new("out", c4, out_dim),
        }
    }

    fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        let mut ps = ParamSet::new();
        self.from_rgb.init(&mut ps, rng);
        for b in &self.blocks {
            b.init(&mut ps, rng);
        }
        self.final_conv.init(&mut ps, rng);
        self.final_linear.init(&mut ps, rng);
        self.out.init(&mut ps, rng);
        ps
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let r = self.cfg.resolution;
        let want = [self.cfg.img_channels, r, r];
        if x.shape().len() != 4 || x.shape()[1..] != want || x.dim(0) == 0 {
            return Err(Error::Config(format!(
                "expected images [n, {}, {r}, {r}], got {:?}",
                self.cfg.img_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    fn forward(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let n = x.dim(0);
        let mut h = self.from_rgb.forward(p, x);
        for b in &self.blocks {
            h = b.forward(p, &h);
        }
        if self.mbstd {
            h = minibatch_stddev(&h, self.cfg.mbstd_group);
        }
        let h = self.final_conv.forward(p, &h);
        let h = h.reshape(&[n, self.cfg.channels_at(4) * 16]);
        Ok(self.out.forward(p, &self.final_linear.forward(p, &h)))
    }
}

/// Appends one channel holding the mean per-feature stddev across a group of
/// samples. Samples `m, m + n/g, m + 2n/g, ...` form a group.
pub fn minibatch_stddev(x: &Tensor, group: usize) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let g = (1..=group.min(n)).rev().find(|g| n % g == 0).unwrap_or(1);
    let m = n / g;
    let y = x.reshape(&[g, m, c, h, w]);
    let centered = y.sub(&y.mean_keepdim(&[0]));
    let std = centered.square().mean_keepdim(&[0]).add_scalar(1e-8).powf(0.5);
    let feat = std.mean_keepdim(&[2, 3, 4]).reshape(&[1, m, 1, 1, 1]);
    let feat = feat.expand(&[g, m, 1, h, w]).reshape(&[n, 1, h, w]);
    Tensor::cat(&[x.clone(), feat], 1)
}

/// Image discriminator; returns one logit per image.
#[derive(Debug, Clone)]
pub struct Discriminator {
    net: Backbone,
}

impl Discriminator {
    pub fn new(cfg: &NetConfig) -> Self {
        Self { net: Backbone::new(cfg, true, 1) }
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        self.net.init_params(rng)
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        let out = self.net.forward(p, x)?;
        Ok(out.reshape(&[x.dim(0)]))
    }
}

/// Encoder `E: X -> W (or W+)`: the discriminator backbone without the
/// minibatch-stddev layer, its last linear resized to the latent width.
#[derive(Debug, Clone)]
pub struct Encoder {
    net: Backbone,
}

impl Encoder {
    pub fn new(cfg: &NetConfig) -> Self {
        Self { net: Backbone::new(cfg, false, cfg.encoder_out_dim()) }
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        self.net.init_params(rng)
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<Style> {
        let out = self.net.forward(p, x)?;
        let cfg = &self.net.cfg;
        Ok(match cfg.latent_space {
            LatentSpace::W => Style::W(out),
            LatentSpace::WPlus => Style::WPlus(out.reshape(&[x.dim(0), cfg.n_styles(), cfg.d_w])),
        })
    }
}
