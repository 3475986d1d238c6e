//! The four networks: mapping `F`, generator `G`, encoder `E` and
//! discriminator `D`, plus style-code utilities.

pub mod config;
pub mod discriminator;
pub mod generator;
pub mod latent;
pub mod layers;
pub mod mapping;
pub mod params;

pub use config::{n_styles_for, LatentSpace, NetConfig};
pub use discriminator::{minibatch_stddev, Discriminator, Encoder};
pub use generator::Generator;
pub use latent::{broadcast_w, parse_index_range, style_mix, Style};
pub use mapping::Mapping;
pub use params::{Bound, ParamArray, ParamSet};

/// The architecture of all four networks for one configuration.
#[derive(Debug, Clone)]
pub struct Networks {
    pub mapping: Mapping,
    pub generator: Generator,
    pub encoder: Encoder,
    pub discriminator: Discriminator,
}

impl Networks {
    pub fn new(cfg: &NetConfig) -> crate::Result<Self> {
        cfg.validate()?;
        Ok(Self {
            mapping: Mapping::new(cfg),
            generator: Generator::new(cfg),
            encoder: Encoder::new(cfg),
            discriminator: Discriminator::new(cfg),
        })
    }
}
