//! Scalar training objectives.
//!
//! Value functions follow the sign convention `V = -E[A(-D(x))] - E[A(D(fake))]`
//! with `A = softplus`: the discriminator maximizes `V`, so its loss is `-V`.
//! Expectations are batch means.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::features::FeatureNet;
use crate::tensor::{grad, Tensor};
use crate::{Error, Result};

/// Sign of the adversarial term inside the inversion loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdversarialForm {
    /// `+lambda_adv * A(-D(x_hat))`: minimizing it makes reconstructions look real.
    NonSaturating,
    /// `-lambda_adv * A(-D(x_hat))`, the sign as printed in the inversion objective.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub lambda_vgg: f64,
    pub lambda_adv: f64,
    pub epsilon_beta: f64,
    pub beta_max: f64,
    pub r1_gamma: f64,
    /// Lazy R1: the penalty is added on every `r1_every`-th discriminator step.
    pub r1_every: usize,
    pub use_adaptive_beta: bool,
    pub adversarial_form: AdversarialForm,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_vgg: 5e-5,
            lambda_adv: 0.1,
            epsilon_beta: 1e-6,
            beta_max: 1e4,
            r1_gamma: 10.0,
            r1_every: 16,
            use_adaptive_beta: true,
            adversarial_form: AdversarialForm::NonSaturating,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_adv) {
            return Err(Error::Config(format!("lambda_adv must be in [0, 1], got {}", self.lambda_adv)));
        }
        if !(self.epsilon_beta > 0.0) {
            return Err(Error::Config("epsilon_beta must be > 0".into()));
        }
        if !(self.beta_max >= 0.0) || !(self.lambda_vgg >= 0.0) || !(self.r1_gamma >= 0.0) {
            return Err(Error::Config("beta_max, lambda_vgg and r1_gamma must be >= 0".into()));
        }
        if self.r1_every == 0 {
            return Err(Error::Config("r1_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Named scalar terms of one loss evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

impl LossReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }

    /// Flat record `{iteration, <prefix><name>: value, ..., <prefix>total}`.
    pub fn to_record(&self, iteration: u64, prefix: &str) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert("iteration".into(), iteration.into());
        for (k, v) in &self.components {
            m.insert(format!("{prefix}{k}"), (*v).into());
        }
        m.insert(format!("{prefix}total"), self.total.into());
        serde_json::Value::Object(m)
    }
}

/// The activation `A(t) = softplus(t)`.
pub fn activation(t: &Tensor) -> Tensor {
    t.softplus()
}

fn check_nonempty(name: &str, t: &Tensor) -> Result<()> {
    if t.numel() == 0 {
        return Err(Error::Argument(format!("{name} logits are empty")));
    }
    Ok(())
}

/// `V = -mean A(-D(x)) - mean A(D(fake))`.
pub fn gan_value(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    check_nonempty("real", real_logits)?;
    check_nonempty("fake", fake_logits)?;
    Ok(activation(&real_logits.neg()).mean().neg().sub(&activation(fake_logits).mean()))
}

/// Value of the reconstruction-pathway discriminator: fakes are `G(E(x))`.
pub fn d2_value(real_logits: &Tensor, recon_logits: &Tensor) -> Result<Tensor> {
    gan_value(real_logits, recon_logits)
}

/// Non-saturating generator loss `mean A(-D(fake))`.
pub fn generator_loss(fake_logits: &Tensor) -> Result<Tensor> {
    check_nonempty("fake", fake_logits)?;
    Ok(activation(&fake_logits.neg()).mean())
}

/// `-mean A(-D(x)) - lambda_adv mean A(D(G(E(x)))) - (1 - lambda_adv) mean A(D(G(F(z))))`.
pub fn aegan_value(real_logits: &Tensor, recon_logits: &Tensor, sample_logits: &Tensor, lambda_adv: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&lambda_adv) {
        return Err(Error::Argument(format!("lambda_adv must be in [0, 1], got {lambda_adv}")));
    }
    check_nonempty("real", real_logits)?;
    check_nonempty("reconstruction", recon_logits)?;
    check_nonempty("sample", sample_logits)?;
    let real = activation(&real_logits.neg()).mean().neg();
    let recon = activation(recon_logits).mean().scale(lambda_adv);
    let sample = activation(sample_logits).mean().scale(1.0 - lambda_adv);
    Ok(real.sub(&recon).sub(&sample))
}

/// Value against the mixture `lambda * (G o F) + (1 - lambda) * P_bar`, with
/// the two fake populations weighted by expectation.
pub fn nda_mixture_value(real_logits: &Tensor, generated_logits: &Tensor, negative_logits: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Argument(format!("mixture weight must be in [0, 1], got {lambda}")));
    }
    check_nonempty("real", real_logits)?;
    check_nonempty("generated", generated_logits)?;
    check_nonempty("negative", negative_logits)?;
    let real = activation(&real_logits.neg()).mean().neg();
    let gen = activation(generated_logits).mean().scale(lambda);
    let neg = activation(negative_logits).mean().scale(1.0 - lambda);
    Ok(real.sub(&gen).sub(&neg))
}

/// In-domain inversion loss, split into the reconstruction part and the
/// adversarial part so the two can be reweighted.
#[derive(Debug, Clone)]
pub struct IdinvTerms {
    /// `pixel + lambda_vgg * perceptual`
    pub rec: Tensor,
    /// `sign * lambda_adv * mean A(-D(x_hat))`
    pub adv: Tensor,
    pub pixel: f64,
    pub perceptual: f64,
    /// `sign * mean A(-D(x_hat))`, before the `lambda_adv` weight.
    pub adversarial: f64,
}

impl IdinvTerms {
    /// `rec + beta * adv`.
    pub fn combine(&self, beta: f64) -> Tensor {
        if beta == 1.0 {
            self.rec.add(&self.adv)
        } else {
            self.rec.add(&self.adv.scale(beta))
        }
    }

    pub fn report(&self, cfg: &ObjectiveConfig, beta: f64) -> LossReport {
        let mut components = BTreeMap::new();
        components.insert("pixel".to_string(), self.pixel);
        components.insert("perceptual".to_string(), self.perceptual);
        components.insert("adversarial".to_string(), self.adversarial);
        components.insert("beta".to_string(), beta);
        let total = self.pixel + cfg.lambda_vgg * self.perceptual + beta * cfg.lambda_adv * self.adversarial;
        LossReport { total, components }
    }
}

/// Pixel and perceptual terms are per-element mean squared errors.
pub fn idinv_terms(
    x: &Tensor,
    x_hat: &Tensor,
    recon_logits: &Tensor,
    h: &dyn FeatureNet,
    cfg: &ObjectiveConfig,
) -> Result<IdinvTerms> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Argument(format!("image shapes differ: {:?} vs {:?}", x.shape(), x_hat.shape())));
    }
    check_nonempty("reconstruction", recon_logits)?;
    let pixel = x.sub(x_hat).square().mean();
    if !pixel.all_finite() {
        return Err(Error::NonFinite("pixel term".into()));
    }
    let fx = h.features(x);
    let fxh = h.features(x_hat);
    if !fx.all_finite() || !fxh.all_finite() {
        return Err(Error::NonFinite("perceptual features".into()));
    }
    let perceptual = fx.sub(&fxh).square().mean();
    let sign = match cfg.adversarial_form {
        AdversarialForm::NonSaturating => 1.0,
        AdversarialForm::Literal => -1.0,
    };
    let adversarial = activation(&recon_logits.neg()).mean().scale(sign);
    if !adversarial.all_finite() {
        return Err(Error::NonFinite("adversarial term".into()));
    }
    let rec = if cfg.lambda_vgg == 0.0 { pixel.clone() } else { pixel.add(&perceptual.scale(cfg.lambda_vgg)) };
    Ok(IdinvTerms {
        pixel: pixel.item(),
        perceptual: perceptual.item(),
        adversarial: adversarial.item(),
        adv: adversarial.scale(cfg.lambda_adv),
        rec,
    })
}

/// Full in-domain inversion loss with `beta = 1`.
pub fn idinv_loss(
    x: &Tensor,
    x_hat: &Tensor,
    recon_logits: &Tensor,
    h: &dyn FeatureNet,
    cfg: &ObjectiveConfig,
) -> Result<(Tensor, LossReport)> {
    let terms = idinv_terms(x, x_hat, recon_logits, h, cfg)?;
    Ok((terms.combine(1.0), terms.report(cfg, 1.0)))
}

fn l2_norm(parts: &[Tensor]) -> f64 {
    parts.iter().flat_map(|t| t.data().iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// `beta = ||grad L_rec|| / (||grad L_adv|| + eps)`, clamped to `[0, beta_max]`,
/// from gradients already taken w.r.t. the generator's last layer.
pub fn adaptive_beta_from_grads(rec_grads: &[Tensor], adv_grads: &[Tensor], cfg: &ObjectiveConfig) -> Result<f64> {
    let nr = l2_norm(rec_grads);
    let na = l2_norm(adv_grads);
    if !nr.is_finite() || !na.is_finite() {
        return Err(Error::NonFinite(format!("adaptive beta gradient norms (rec {nr}, adv {na})")));
    }
    let beta = nr / (na + cfg.epsilon_beta);
    Ok(beta.clamp(0.0, cfg.beta_max))
}

/// Probes both losses w.r.t. `last_layer` with a functional gradient; nothing
/// is accumulated into training gradients. The result is a plain number.
pub fn adaptive_beta(l_rec: &Tensor, l_adv: &Tensor, last_layer: &[&Tensor], cfg: &ObjectiveConfig) -> Result<f64> {
    let gr = grad(l_rec, last_layer, false);
    let ga = grad(l_adv, last_layer, false);
    adaptive_beta_from_grads(&gr, &ga, cfg)
}

/// `(gamma / 2) * mean_i ||d D(x_i) / d x_i||^2`.
///
/// `logits_of` is evaluated on a gradient-tracking copy of `x`; the returned
/// penalty stays differentiable w.r.t. whatever parameters `logits_of` uses.
pub fn r1_penalty(x: &Tensor, gamma: f64, logits_of: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let xp = Tensor::param(x.to_vec(), x.shape());
    let logits = logits_of(&xp)?;
    let gx = grad(&logits.sum(), &[&xp], true).remove(0);
    let n = x.dim(0);
    let per = gx.square().reshape(&[n, x.numel() / n]).sum_keepdim(&[1]);
    Ok(per.mean().scale(gamma / 2.0))
}
