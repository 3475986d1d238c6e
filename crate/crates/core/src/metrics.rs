//! Evaluation metrics: Fréchet distance, sample diversity, perceptual path
//! length and reconstruction error.
//!
//! All metrics are deterministic given their inputs and RNG; callers hand in a
//! dedicated RNG so metric sampling never shares a stream with training.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::features::FeatureNet;
use crate::tensor::{no_grad, Tensor};
use crate::{Error, Result};

/// Pixel error scale: images in `[-1, 1]` map to `[0, 255]` with this factor.
pub const PIXEL_SCALE: f64 = 127.5;

fn to_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    if t.shape().len() != 2 {
        return Err(Error::Argument(format!("feature batch must be [n, d], got {:?}", t.shape())));
    }
    if !t.all_finite() {
        return Err(Error::NonFinite("feature batch".into()));
    }
    Ok(DMatrix::from_row_slice(t.dim(0), t.dim(1), t.data()))
}

/// Mean and covariance of the rows. The covariance is shrunk towards a scaled
/// identity when there are too few rows to make it full rank.
fn gaussian_fit(x: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 feature rows, got {n}")));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    if n <= d {
        let alpha = d as f64 / (n + d) as f64;
        let mu = cov.trace() / d as f64;
        cov *= 1.0 - alpha;
        for i in 0..d {
            cov[(i, i)] += alpha * mu;
        }
    }
    Ok((mean, cov))
}

fn clipped_eigenvalues(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    let min = eig.eigenvalues.min();
    if min < -1e-6 * scale {
        return Err(Error::Numeric(format!("matrix is not positive semi-definite: min eigenvalue {min:e}")));
    }
    Ok((eig.eigenvalues.map(|v| v.max(0.0)), eig.eigenvectors))
}

/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of the matrix square root is computed as the sum of square roots
/// of the eigenvalues of the symmetric `S_a^(1/2) S_b S_a^(1/2)`.
pub fn frechet_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (ma, mb) = (to_matrix(a)?, to_matrix(b)?);
    if ma.ncols() != mb.ncols() {
        return Err(Error::Argument(format!("feature widths differ: {} vs {}", ma.ncols(), mb.ncols())));
    }
    let (mu_a, cov_a) = gaussian_fit(&ma)?;
    let (mu_b, cov_b) = gaussian_fit(&mb)?;
    let (vals, vecs) = clipped_eigenvalues(&cov_a)?;
    let sqrt_a = &vecs * DMatrix::from_diagonal(&vals.map(f64::sqrt)) * vecs.transpose();
    let inner = &sqrt_a * &cov_b * &sqrt_a;
    let (inner_vals, _) = clipped_eigenvalues(&inner)?;
    let tr_sqrt: f64 = inner_vals.iter().map(|v| v.sqrt()).sum();
    let diff = (&mu_a - &mu_b).norm_squared();
    Ok((diff + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Per-pair perceptual distances `mean((h(x_i) - h(x_j))^2)` over feature rows.
fn pair_distance(f: &[f64], d: usize, i: usize, j: usize) -> f64 {
    let (a, b) = (&f[i * d..(i + 1) * d], &f[j * d..(j + 1) * d]);
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / d as f64
}

/// All unordered pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Mean pairwise perceptual distance among samples. With `n_pairs` at least
/// the number of distinct pairs, every pair is used; otherwise a seeded
/// subset of distinct pairs is drawn.
pub fn lpips_diversity(samples: &Tensor, h: &dyn FeatureNet, n_pairs: usize, rng: &mut impl Rng) -> Result<f64> {
    let n = samples.dim(0);
    if n < 2 {
        return Err(Error::Argument("diversity needs at least 2 samples".into()));
    }
    let pairs = all_pairs(n);
    let chosen: Vec<(usize, usize)> = if n_pairs >= pairs.len() {
        pairs
    } else {
        let mut idx = index::sample(rng, pairs.len(), n_pairs.max(1)).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| pairs[k]).collect()
    };
    let feats = no_grad(|| h.features(samples));
    let d = feats.dim(1);
    let total: f64 = chosen.iter().map(|&(i, j)| pair_distance(feats.data(), d, i, j)).sum();
    Ok(total / chosen.len() as f64)
}

/// Symmetric matrix of pairwise perceptual distances.
pub fn pairwise_distances(samples: &Tensor, h: &dyn FeatureNet) -> Vec<Vec<f64>> {
    let feats = no_grad(|| h.features(samples));
    let (n, d) = (feats.dim(0), feats.dim(1));
    (0..n).map(|i| (0..n).map(|j| pair_distance(feats.data(), d, i, j)).collect()).collect()
}

/// Where along an interpolation path the finite difference is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PathSampling {
    /// `t ~ U[0, 1]`.
    Full,
    /// `t` is one of the endpoints `{0, 1}`.
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PplConfig {
    pub n_paths: usize,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for PplConfig {
    fn default() -> Self {
        Self { n_paths: 1000, eps: 1e-4, batch_size: 50 }
    }
}

/// The three pieces of a latent path-length measurement.
pub struct PathModel<'a> {
    pub d_z: usize,
    /// `z -> w`
    pub map: &'a dyn Fn(&Tensor) -> Result<Tensor>,
    /// `w -> image`
    pub synthesize: &'a dyn Fn(&Tensor) -> Result<Tensor>,
    /// Per-sample perceptual distance `[n]`.
    pub distance: &'a dyn Fn(&Tensor, &Tensor) -> Tensor,
}

fn lerp(a: &Tensor, b: &Tensor, t: &[f64]) -> Tensor {
    let n = a.dim(0);
    let tt = Tensor::new(t.to_vec(), &[n, 1]);
    a.add(&b.sub(a).mul(&tt))
}

/// Mean of `d(G(lerp(w1, w2, t)), G(lerp(w1, w2, t + eps))) / eps^2` over paths.
/// At `t = 1` the step is taken backwards so it stays on the segment.
pub fn perceptual_path_length(model: &PathModel<'_>, mode: PathSampling, cfg: &PplConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut sampler: Box<dyn FnMut(&mut ChaCha8Rng) -> f64> = match mode {
        PathSampling::Full => Box::new(|r: &mut ChaCha8Rng| r.gen::<f64>()),
        PathSampling::End => Box::new(|r: &mut ChaCha8Rng| if r.gen::<bool>() { 1.0 } else { 0.0 }),
    };
    perceptual_path_length_with(model, cfg, rng, &mut *sampler)
}

/// [`perceptual_path_length`] with an explicit sampler for `t`.
pub fn perceptual_path_length_with(
    model: &PathModel<'_>,
    cfg: &PplConfig,
    rng: &mut ChaCha8Rng,
    t_sampler: &mut dyn FnMut(&mut ChaCha8Rng) -> f64,
) -> Result<f64> {
    if !(cfg.eps > 0.0) || cfg.n_paths == 0 || cfg.batch_size == 0 {
        return Err(Error::Argument("path length needs eps > 0, n_paths >= 1 and batch_size >= 1".into()));
    }
    no_grad(|| {
        let mut total = 0.0;
        let mut done = 0;
        while done < cfg.n_paths {
            let b = cfg.batch_size.min(cfg.n_paths - done);
            let z = |rng: &mut ChaCha8Rng| {
                let data = (0..b * model.d_z).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                Tensor::new(data, &[b, model.d_z])
            };
            let (z1, z2) = (z(rng), z(rng));
            let t: Vec<f64> = (0..b).map(|_| t_sampler(rng)).collect();
            let t0: Vec<f64> = t.iter().map(|&t| if t + cfg.eps > 1.0 { t - cfg.eps } else { t }).collect();
            let t1: Vec<f64> = t0.iter().map(|t| t + cfg.eps).collect();
            let (w1, w2) = ((model.map)(&z1)?, (model.map)(&z2)?);
            let img0 = (model.synthesize)(&lerp(&w1, &w2, &t0))?;
            let img1 = (model.synthesize)(&lerp(&w1, &w2, &t1))?;
            let d = (model.distance)(&img0, &img1);
            total += d.data().iter().sum::<f64>() / (cfg.eps * cfg.eps);
            done += b;
        }
        Ok(total / cfg.n_paths as f64)
    })
}

/// Reconstruction error of one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    /// Mean squared error on the `[0, 255]` pixel scale.
    pub mse: f64,
    /// Mean perceptual distance under `h`.
    pub perceptual: f64,
    pub per_image_mse: Vec<f64>,
    pub per_image_perceptual: Vec<f64>,
}

pub fn reconstruction_metrics(x: &Tensor, x_hat: &Tensor, h: &dyn FeatureNet) -> Result<ReconstructionMetrics> {
    if x.shape() != x_hat.shape() || x.shape().is_empty() || x.dim(0) == 0 {
        return Err(Error::Argument(format!("reconstruction shapes differ: {:?} vs {:?}", x.shape(), x_hat.shape())));
    }
    let n = x.dim(0);
    let per = x.numel() / n;
    let per_image_mse: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (&x.data()[i * per..(i + 1) * per], &x_hat.data()[i * per..(i + 1) * per]);
            a.iter().zip(b).map(|(p, q)| ((p - q) * PIXEL_SCALE).powi(2)).sum::<f64>() / per as f64
        })
        .collect();
    let per_image_perceptual = no_grad(|| crate::features::perceptual_distance(h, x, x_hat)).to_vec();
    Ok(ReconstructionMetrics {
        mse: per_image_mse.iter().sum::<f64>() / n as f64,
        perceptual: per_image_perceptual.iter().sum::<f64>() / n as f64,
        per_image_mse,
        per_image_perceptual,
    })
}

/// Evaluation summary written by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub fid: f64,
    pub lpips_diversity: f64,
    pub ppl_full: f64,
    pub ppl_end: f64,
    pub recon_mse: f64,
    pub recon_perceptual: f64,
    pub recon_fid: f64,
    pub n_samples: usize,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.fid,
            self.lpips_diversity,
            self.ppl_full,
            self.ppl_end,
            self.recon_mse,
            self.recon_perceptual,
            self.recon_fid,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numeric(format!("metric report has negative or non-finite entries: {self:?}")));
        }
        Ok(())
    }

    /// Aligned two-column table, with the feature network named in the header.
    pub fn to_table(&self, feature_net: &str) -> String {
        let rows = [
            ("fid", format!("{:.6}", self.fid)),
            ("lpips_diversity", format!("{:.6}", self.lpips_diversity)),
            ("ppl_full", format!("{:.6}", self.ppl_full)),
            ("ppl_end", format!("{:.6}", self.ppl_end)),
            ("recon_mse", format!("{:.6}", self.recon_mse)),
            ("recon_perceptual", format!("{:.6}", self.recon_perceptual)),
            ("recon_fid", format!("{:.6}", self.recon_fid)),
            ("n_samples", self.n_samples.to_string()),
        ];
        let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let vw = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let mut s = format!("# features: {feature_net}\n");
        s.push_str(&format!("{:<w$}  {:>vw$}\n", "metric", "value"));
        s.push_str(&format!("{}  {}\n", "-".repeat(w), "-".repeat(vw)));
        for (k, v) in rows {
            s.push_str(&format!("{k:<w$}  {v:>vw$}\n"));
        }
        s
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_table("unspecified"))
    }
}
