use rand::Rng;
use rand_distr::StandardNormal;

use super::config::NetConfig;
use super::latent::Style;
use super::layers::{StyledConv, ToRgb};
use super::params::{Bound, ParamArray, ParamSet};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Style-based synthesis network `G: W -> X`.
///
/// A learned 4x4 constant is refined by one styled conv, then each doubling of
/// resolution runs an upsampling styled conv and a plain styled conv. A final
/// 1x1 projection and `tanh` produce the image. Every synthesis layer consumes
/// exactly one style row, which gives `2 * log2(resolution) - 2` rows.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: NetConfig,
    convs: Vec<StyledConv>,
    to_rgb: ToRgb,
}

impl Generator {
    /// Parameter holding the weight of the final synthesis layer.
    pub const LAST_LAYER: &'static str = "to_rgb.weight";

    pub fn new(cfg: &NetConfig) -> Self {
        let d_w = cfg.d_w;
        let mut convs = vec![StyledConv::new("conv.0", cfg.channels_at(4), cfg.channels_at(4), d_w, false, cfg.use_noise)];
        let mut res = 8;
        while res <= cfg.resolution {
            let (cin, cout) = (cfg.channels_at(res / 2), cfg.channels_at(res));
            let i = convs.len();
            convs.push(StyledConv::new(format!("conv.{i}"), cin, cout, d_w, true, cfg.use_noise));
            convs.push(StyledConv::new(format!("conv.{}", i + 1), cout, cout, d_w, false, cfg.use_noise));
            res *= 2;
        }
        let to_rgb = ToRgb::new("to_rgb", cfg.channels_at(cfg.resolution), cfg.img_channels, d_w);
        debug_assert_eq!(convs.len() + 1, cfg.n_styles());
        Self { cfg: cfg.clone(), convs, to_rgb }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        let mut ps = ParamSet::new();
        let c = self.cfg.channels_at(4);
        ps.insert("input.const", ParamArray::randn(&[1, c, 4, 4], 1.0, rng));
        for conv in &self.convs {
            conv.init(&mut ps, rng);
        }
        self.to_rgb.init(&mut ps, rng);
        ps
    }

    /// Synthesizes images in `[-1, 1]`. Noise is injected only when the
    /// architecture enables it and a noise source is supplied.
    pub fn forward(&self, p: &Bound, style: &Style, noise_rng: Option<&mut dyn rand::RngCore>) -> Result<Tensor> {
        let n_styles = self.cfg.n_styles();
        if style.d_w() != self.cfg.d_w {
            return Err(Error::Config(format!("style width {} != d_w {}", style.d_w(), self.cfg.d_w)));
        }
        if let Some(k) = style.n_styles() {
            if k != n_styles {
                return Err(Error::Config(format!("got {k} style rows, generator has {n_styles} layers")));
            }
        }
        let n = style.batch();
        if n == 0 {
            return Err(Error::Config("empty style batch".into()));
        }
        let c4 = self.cfg.channels_at(4);
        let mut x = p.get("input.const").expand(&[n, c4, 4, 4]);
        let mut noise_rng = noise_rng;
        let mut size = 4;
        for (j, conv) in self.convs.iter().enumerate() {
            if conv.upsample {
                size *= 2;
            }
            let noise = match (&mut noise_rng, self.cfg.use_noise) {
                (Some(rng), true) => {
                    let data = (0..n * size * size).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    Some(Tensor::new(data, &[n, 1, size, size]))
                }
                _ => None,
            };
            x = conv.forward(p, &x, &style.layer(j), noise.as_ref());
        }
        let img = self.to_rgb.forward(p, &x, &style.layer(n_styles - 1));
        Ok(img.tanh())
    }
}
