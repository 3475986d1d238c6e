use rand::Rng;

use super::config::NetConfig;
use super::layers::EqualLinear;
use super::params::{Bound, ParamSet};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Mapping network `F: Z -> W`, an MLP behind a pixel norm.
#[derive(Debug, Clone)]
pub struct Mapping {
    d_z: usize,
    normalize_input: bool,
    layers: Vec<EqualLinear>,
}

impl Mapping {
    pub fn new(cfg: &NetConfig) -> Self {
        Self::with_options(cfg, true, true)
    }

    /// `normalize_input` toggles the pixel norm of `z`; `activate` toggles the
    /// nonlinearity after every layer.
    pub fn with_options(cfg: &NetConfig, normalize_input: bool, activate: bool) -> Self {
        let layers = (0..cfg.n_mapping_layers)
            .map(|i| {
                let in_dim = if i == 0 { cfg.d_z } else { cfg.d_w };
                EqualLinear::new(format!("mapping.{i}"), in_dim, cfg.d_w)
                    .lr_mul(cfg.mapping_lr_mul)
                    .activate(activate)
            })
            .collect();
        Self { d_z: cfg.d_z, normalize_input, layers }
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        let mut ps = ParamSet::new();
        for l in &self.layers {
            l.init(&mut ps, rng);
        }
        ps
    }

    pub fn layers(&self) -> &[EqualLinear] {
        &self.layers
    }

    pub fn forward(&self, p: &Bound, z: &Tensor) -> Result<Tensor> {
        if z.shape().len() != 2 || z.dim(1) != self.d_z || z.dim(0) == 0 {
            return Err(Error::Config(format!("mapping expects z of shape [n, {}], got {:?}", self.d_z, z.shape())));
        }
        let mut x = if self.normalize_input {
            z.mul(&z.square().mean_keepdim(&[1]).add_scalar(1e-8).powf(-0.5))
        } else {
            z.clone()
        };
        for l in &self.layers {
            x = l.forward(p, &x);
        }
        Ok(x)
    }
}
