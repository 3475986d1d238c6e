use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which latent space the encoder targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentSpace {
    /// One style vector per image.
    #[serde(rename = "W")]
    W,
    /// One style vector per synthesis layer.
    #[serde(rename = "W_PLUS")]
    WPlus,
}

/// Architecture of the four networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub resolution: usize,
    pub img_channels: usize,
    pub d_z: usize,
    pub d_w: usize,
    pub n_mapping_layers: usize,
    /// Learning-rate multiplier of the mapping network (equalized LR).
    pub mapping_lr_mul: f64,
    /// Channel width at the output resolution; doubles per halving of resolution.
    pub base_channels: usize,
    pub max_channels: usize,
    pub latent_space: LatentSpace,
    /// Per-layer noise injection in the generator. Off keeps every forward deterministic.
    pub use_noise: bool,
    /// Minibatch-stddev group size of the discriminator.
    pub mbstd_group: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            img_channels: 3,
            d_z: 64,
            d_w: 64,
            n_mapping_layers: 8,
            mapping_lr_mul: 0.01,
            base_channels: 64,
            max_channels: 256,
            latent_space: LatentSpace::WPlus,
            use_noise: false,
            mbstd_group: 4,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if !r.is_power_of_two() || !(8..=128).contains(&r) {
            return Err(Error::Config(format!("resolution must be a power of two in [8, 128], got {r}")));
        }
        let dims = [
            ("img_channels", self.img_channels),
            ("d_z", self.d_z),
            ("d_w", self.d_w),
            ("n_mapping_layers", self.n_mapping_layers),
            ("base_channels", self.base_channels),
            ("max_channels", self.max_channels),
            ("mbstd_group", self.mbstd_group),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.mapping_lr_mul > 0.0 && self.mapping_lr_mul.is_finite()) {
            return Err(Error::Config("mapping_lr_mul must be positive".into()));
        }
        Ok(())
    }

    /// Number of style vectors consumed by the generator: `2 * log2(resolution) - 2`.
    pub fn n_styles(&self) -> usize {
        n_styles_for(self.resolution)
    }

    pub fn log2_resolution(&self) -> usize {
        self.resolution.trailing_zeros() as usize
    }

    /// Feature-map width used at spatial size `res`.
    pub fn channels_at(&self, res: usize) -> usize {
        let factor = (self.resolution / res).max(1);
        (self.base_channels * factor).min(self.max_channels)
    }

    /// Width of the encoder output before any reshape.
    pub fn encoder_out_dim(&self) -> usize {
        match self.latent_space {
            LatentSpace::W => self.d_w,
            LatentSpace::WPlus => self.n_styles() * self.d_w,
        }
    }
}

pub fn n_styles_for(resolution: usize) -> usize {
    2 * resolution.trailing_zeros() as usize - 2
}
