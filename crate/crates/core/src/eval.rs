//! Full evaluation of a trained model against a dataset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::features::{perceptual_distance, FeatureNet};
use crate::metrics::{
    frechet_distance, lpips_diversity, perceptual_path_length, reconstruction_metrics, MetricReport, PathModel,
    PathSampling, PplConfig,
};
use crate::nn::Style;
use crate::tensor::{no_grad, Tensor};
use crate::trainer::{sample_z, Model};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Generated samples, and real images (capped at the dataset size).
    pub n_samples: usize,
    pub n_pairs: usize,
    pub ppl: PplConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// Use real images in place of generated samples.
    pub bypass: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_samples: 256, n_pairs: 512, ppl: PplConfig { n_paths: 200, ..PplConfig::default() }, batch_size: 32, seed: 0, bypass: false }
    }
}

fn batched(n: usize, batch: usize, mut f: impl FnMut(usize, usize) -> Result<Tensor>) -> Result<Tensor> {
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n {
        let len = batch.min(n - start);
        parts.push(f(start, len)?);
        start += len;
    }
    Ok(no_grad(|| Tensor::cat(&parts, 0)))
}

fn embed_all(h: &dyn FeatureNet, x: &Tensor, batch: usize) -> Result<Tensor> {
    batched(x.dim(0), batch, |s, l| Ok(no_grad(|| h.embed(&x.narrow(0, s, l)))))
}

/// Sample metrics use `samples_from` (normally the EMA model); reconstruction
/// metrics use `recon_from` (normally the live model the encoder was trained against).
pub fn evaluate(
    samples_from: &Model<'_>,
    recon_from: &Model<'_>,
    data: &Dataset,
    h: &dyn FeatureNet,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    if cfg.batch_size == 0 || cfg.n_samples == 0 {
        return Err(Error::Config("eval batch_size and n_samples must be positive".into()));
    }
    let n_real = cfg.n_samples.min(data.len());
    let d_f = h.embed(&data.item(0)).dim(1);
    if n_real < 2 {
        return Err(Error::Dataset(format!("need at least 2 images for covariance estimates, dataset has {}", data.len())));
    }
    if n_real <= d_f {
        log::warn!("{n_real} images for {d_f} feature dimensions: covariance shrinkage applies");
    }
    let cfg_net = samples_from.config();
    let real = data.batch(&(0..n_real).collect::<Vec<_>>());
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(k);
        r
    };

    let samples = if cfg.bypass {
        real.clone()
    } else {
        let mut rng = stream(0);
        let d_z = cfg_net.d_z;
        batched(cfg.n_samples, cfg.batch_size, |_, l| samples_from.sample(&sample_z(&mut rng, l, d_z)))?
    };
    let real_feats = embed_all(h, &real, cfg.batch_size)?;
    let fid = frechet_distance(&real_feats, &embed_all(h, &samples, cfg.batch_size)?)?;
    let lpips = lpips_diversity(&samples, h, cfg.n_pairs, &mut stream(1))?;

    let map = |z: &Tensor| samples_from.map(z);
    let synthesize = |w: &Tensor| samples_from.synthesize(&Style::W(w.clone()));
    let distance = |a: &Tensor, b: &Tensor| perceptual_distance(h, a, b);
    let path = PathModel { d_z: cfg_net.d_z, map: &map, synthesize: &synthesize, distance: &distance };
    let ppl_cfg = PplConfig { batch_size: cfg.ppl.batch_size.min(cfg.batch_size).max(1), ..cfg.ppl.clone() };
    let ppl_full = perceptual_path_length(&path, PathSampling::Full, &ppl_cfg, &mut stream(2))?;
    let ppl_end = perceptual_path_length(&path, PathSampling::End, &ppl_cfg, &mut stream(3))?;

    let recon = if cfg.bypass { real.clone() } else { batched(n_real, cfg.batch_size, |s, l| recon_from.reconstruct(&real.narrow(0, s, l)))? };
    let rm = reconstruction_metrics(&real, &recon, h)?;
    let recon_fid = frechet_distance(&real_feats, &embed_all(h, &recon, cfg.batch_size)?)?;

    let report = MetricReport {
        fid,
        lpips_diversity: lpips,
        ppl_full,
        ppl_end,
        recon_mse: rm.mse,
        recon_perceptual: rm.perceptual,
        recon_fid,
        n_samples: cfg.n_samples,
    };
    report.validate()?;
    Ok(report)
}
