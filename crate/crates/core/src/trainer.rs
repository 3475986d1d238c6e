//! Decoupled and joint training loops.
//!
//! One iteration runs Step I (discriminators), Step II (inversion, repeated
//! `e_steps_per_g_step` times) and Step III (mapping + generator), then
//! updates the EMA copies of F and G.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MinibatchSampler};
use crate::features::RandomConvFeatures;
use crate::nn::{Bound, Generator, NetConfig, Networks, ParamArray, ParamSet, Style};
use crate::objectives::{self, LossReport, ObjectiveConfig};
use crate::tensor::{grad, no_grad, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrainMode {
    /// Separate discriminators for samples and reconstructions; G frozen while E trains.
    Decoupled,
    /// One discriminator; E and G trained together on the inversion loss.
    Joint,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Decoupled => "DECOUPLED",
            TrainMode::Joint => "JOINT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-3, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub e_steps_per_g_step: usize,
    pub batch_size: usize,
    pub total_iterations: u64,
    pub adam: AdamConfig,
    pub ema_decay: f64,
    pub seed: u64,
    /// Seed of the fixed random perceptual feature network.
    pub feature_seed: u64,
    pub objective: ObjectiveConfig,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Joint,
            e_steps_per_g_step: 1,
            batch_size: 8,
            total_iterations: 2000,
            adam: AdamConfig::default(),
            ema_decay: 0.999,
            seed: 0,
            feature_seed: 0,
            objective: ObjectiveConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.objective.validate()?;
        if self.e_steps_per_g_step == 0 {
            return Err(Error::Config("e_steps_per_g_step must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config(format!("invalid adam settings {a:?}")));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay must be in [0, 1), got {}", self.ema_decay)));
        }
        Ok(())
    }

    pub fn n_discriminators(&self) -> usize {
        match self.mode {
            TrainMode::Decoupled => 2,
            TrainMode::Joint => 1,
        }
    }
}

/// First and second moment estimates of one optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn for_params(p: &ParamSet) -> Self {
        Self { m: p.zeros_like(), v: p.zeros_like(), step: 0 }
    }
}

/// One bias-corrected ADAM step over the parameters named in `grads`.
/// Non-finite gradients are rejected before anything is modified.
pub fn adam_update(params: &mut ParamSet, grads: &BTreeMap<String, Vec<f64>>, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| Error::State(format!("gradient for unknown parameter {name}")))?;
        if p.data.len() != g.len() {
            return Err(Error::State(format!("gradient for {name} has {} values, parameter has {}", g.len(), p.data.len())));
        }
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name} contains {bad}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state.m.get_mut(name).ok_or_else(|| Error::State(format!("no moments for {name}")))?;
        let v = state.v.get_mut(name).ok_or_else(|| Error::State(format!("no moments for {name}")))?;
        for i in 0..g.len() {
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g[i];
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m.data[i] / c1;
            let vh = v.data[i] / c2;
            p.data[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// `ema <- decay * ema + (1 - decay) * params`, written as
/// `ema + (1 - decay) * (params - ema)` so equal inputs stay exactly equal.
pub fn ema_update(params: &ParamSet, ema: &mut ParamSet, decay: f64) {
    for (name, e) in ema.iter_mut() {
        let p = params.get(name).unwrap_or_else(|| panic!("ema parameter {name} missing from source"));
        for (ev, pv) in e.data.iter_mut().zip(&p.data) {
            *ev += (1.0 - decay) * (pv - *ev);
        }
    }
}

/// Every parameter and optimizer buffer of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub iteration: u64,
    pub mapping: ParamSet,
    pub generator: ParamSet,
    pub encoder: ParamSet,
    /// One discriminator in JOINT mode, two (D1 for samples, D2 for
    /// reconstructions) in DECOUPLED mode.
    pub discriminators: Vec<ParamSet>,
    pub mapping_ema: ParamSet,
    pub generator_ema: ParamSet,
    pub adam_mapping: AdamState,
    pub adam_generator: AdamState,
    pub adam_encoder: AdamState,
    pub adam_discriminators: Vec<AdamState>,
    pub rng: ChaCha8Rng,
    /// Minibatch order, when the state drives its own data loading.
    pub sampler: Option<MinibatchSampler>,
}

impl TrainState {
    /// Fresh parameters. Every network draws from its own seeded stream, so
    /// D1 and D2 are initialized independently.
    pub fn init(config: &TrainConfig, nets: &Networks) -> Result<Self> {
        config.validate()?;
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(k + 1);
            r
        };
        let mapping = nets.mapping.init_params(&mut stream(0));
        let generator = nets.generator.init_params(&mut stream(1));
        let encoder = nets.encoder.init_params(&mut stream(2));
        let discriminators: Vec<ParamSet> =
            (0..config.n_discriminators()).map(|k| nets.discriminator.init_params(&mut stream(3 + k as u64))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);
        Ok(Self {
            config: config.clone(),
            iteration: 0,
            adam_mapping: AdamState::for_params(&mapping),
            adam_generator: AdamState::for_params(&generator),
            adam_encoder: AdamState::for_params(&encoder),
            adam_discriminators: discriminators.iter().map(AdamState::for_params).collect(),
            mapping_ema: mapping.clone(),
            generator_ema: generator.clone(),
            mapping,
            generator,
            encoder,
            discriminators,
            rng,
            sampler: None,
        })
    }

    pub fn check_structure(&self) -> Result<()> {
        let want = self.config.n_discriminators();
        if self.discriminators.len() != want || self.adam_discriminators.len() != want {
            return Err(Error::State(format!(
                "{} mode needs {want} discriminator(s), state has {}",
                self.config.mode,
                self.discriminators.len()
            )));
        }
        Ok(())
    }
}

/// A network whose parameters a phase may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Net {
    Mapping,
    Generator,
    Encoder,
    Discriminator(usize),
}

/// Sub-steps of one iteration, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Discriminator,
    /// The `k`-th repetition of the inversion step.
    Inversion(usize),
    Generator,
    Ema,
}

/// Losses of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: u64,
    pub d_loss: f64,
    /// Last inversion step's components.
    pub e_loss: LossReport,
    pub g_loss: f64,
    pub beta: f64,
    pub r1: Option<f64>,
    /// Networks updated by each phase, in order.
    pub phases: Vec<(Phase, Vec<Net>)>,
}

impl StepReport {
    /// Number of inversion-step updates in this iteration.
    pub fn e_updates(&self) -> usize {
        self.phases.iter().filter(|(p, _)| matches!(p, Phase::Inversion(_))).count()
    }

    /// Metrics-log record.
    pub fn to_record(&self, wall_ms: f64) -> serde_json::Value {
        let mut e = serde_json::Map::new();
        e.insert("total".into(), self.e_loss.total.into());
        for (k, v) in &self.e_loss.components {
            if k != "beta" {
                e.insert(k.clone(), (*v).into());
            }
        }
        serde_json::json!({
            "iter": self.iteration,
            "d_loss": self.d_loss,
            "e_loss": e,
            "g_loss": self.g_loss,
            "beta": self.beta,
            "e_updates": self.e_updates(),
            "wall_ms": wall_ms,
        })
    }
}

/// Read-only view of a model for sampling and encoding.
pub struct Model<'a> {
    pub nets: &'a Networks,
    pub mapping: &'a ParamSet,
    pub generator: &'a ParamSet,
    pub encoder: &'a ParamSet,
}

impl Model<'_> {
    pub fn config(&self) -> &NetConfig {
        self.nets.generator.config()
    }

    pub fn map(&self, z: &Tensor) -> Result<Tensor> {
        no_grad(|| self.nets.mapping.forward(&self.mapping.bind(false), z))
    }

    pub fn synthesize(&self, style: &Style) -> Result<Tensor> {
        no_grad(|| self.nets.generator.forward(&self.generator.bind(false), style, None))
    }

    pub fn encode(&self, x: &Tensor) -> Result<Style> {
        no_grad(|| self.nets.encoder.forward(&self.encoder.bind(false), x))
    }

    pub fn sample(&self, z: &Tensor) -> Result<Tensor> {
        self.synthesize(&Style::W(self.map(z)?))
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.synthesize(&self.encode(x)?)
    }
}

/// Standard normal latents `[n, d]`.
pub fn sample_z(rng: &mut impl Rng, n: usize, d: usize) -> Tensor {
    Tensor::new((0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(), &[n, d])
}

fn grads_of(loss: &Tensor, bound: &[(&str, &Tensor)]) -> BTreeMap<String, Vec<f64>> {
    let wrt: Vec<&Tensor> = bound.iter().map(|(_, t)| *t).collect();
    let gs = grad(loss, &wrt, false);
    bound.iter().zip(gs).map(|((n, _), g)| (n.to_string(), g.to_vec())).collect()
}

fn check_loss(name: &str, t: &Tensor) -> Result<f64> {
    let v = t.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{name} is {v}")));
    }
    Ok(v)
}

/// Owns the architectures, the perceptual network and the state.
pub struct Trainer {
    pub nets: Networks,
    pub features: RandomConvFeatures,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let nets = Networks::new(&config.net)?;
        let state = TrainState::init(config, &nets)?;
        Ok(Self { features: RandomConvFeatures::new(config.net.img_channels, config.feature_seed), nets, state })
    }

    pub fn from_state(state: TrainState) -> Result<Self> {
        state.config.validate()?;
        state.check_structure()?;
        let nets = Networks::new(&state.config.net)?;
        Ok(Self { features: RandomConvFeatures::new(state.config.net.img_channels, state.config.feature_seed), nets, state })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    /// Live F, G and E.
    pub fn live_model(&self) -> Model<'_> {
        Model { nets: &self.nets, mapping: &self.state.mapping, generator: &self.state.generator, encoder: &self.state.encoder }
    }

    /// EMA copies of F and G with the live encoder.
    pub fn ema_model(&self) -> Model<'_> {
        Model {
            nets: &self.nets,
            mapping: &self.state.mapping_ema,
            generator: &self.state.generator_ema,
            encoder: &self.state.encoder,
        }
    }

    /// One iteration of the configured algorithm.
    pub fn step(&mut self, batch: &Tensor) -> Result<StepReport> {
        self.step_with_hook(batch, &mut |_, _| {})
    }

    /// As [`Trainer::step`], calling `hook` after every phase.
    pub fn step_with_hook(&mut self, batch: &Tensor, hook: &mut dyn FnMut(Phase, &TrainState)) -> Result<StepReport> {
        match self.state.config.mode {
            TrainMode::Decoupled => self.decoupled_step_with_hook(batch, hook),
            TrainMode::Joint => self.joint_step_with_hook(batch, hook),
        }
    }

    pub fn decoupled_step(&mut self, batch: &Tensor) -> Result<StepReport> {
        self.decoupled_step_with_hook(batch, &mut |_, _| {})
    }

    pub fn joint_step(&mut self, batch: &Tensor) -> Result<StepReport> {
        self.joint_step_with_hook(batch, &mut |_, _| {})
    }

    fn require_mode(&self, mode: TrainMode) -> Result<()> {
        if self.state.config.mode != mode {
            return Err(Error::State(format!("{mode} step called on a {} state", self.state.config.mode)));
        }
        self.state.check_structure()
    }

    fn r1_due(&self) -> bool {
        let o = &self.state.config.objective;
        o.r1_gamma > 0.0 && o.r1_every > 0 && self.state.iteration % o.r1_every as u64 == 0
    }

    fn sample_latents(&mut self, n: usize) -> Tensor {
        let d = self.state.config.net.d_z;
        sample_z(&mut self.state.rng, n, d)
    }

    fn generate(&mut self, f: &Bound, g: &Bound, z: &Tensor) -> Result<Tensor> {
        let w = self.nets.mapping.forward(f, z)?;
        let noise = self.state.config.net.use_noise;
        let rng: Option<&mut dyn rand::RngCore> = if noise { Some(&mut self.state.rng) } else { None };
        self.nets.generator.forward(g, &Style::W(w), rng)
    }

    fn synthesize(&mut self, g: &Bound, style: &Style) -> Result<Tensor> {
        let noise = self.state.config.net.use_noise;
        let rng: Option<&mut dyn rand::RngCore> = if noise { Some(&mut self.state.rng) } else { None };
        self.nets.generator.forward(g, style, rng)
    }

    /// `-V` for discriminator `k` plus its lazy R1 term.
    fn disc_loss(&self, k: usize, db: &Bound, value: Tensor, x: &Tensor, r1_total: &mut f64) -> Result<Tensor> {
        let mut loss = value.neg();
        if self.r1_due() {
            let o = &self.state.config.objective;
            let pen = objectives::r1_penalty(x, o.r1_gamma, |xp| self.nets.discriminator.forward(db, xp))?;
            *r1_total += check_loss(&format!("R1 penalty of discriminator {k}"), &pen)?;
            loss = loss.add(&pen.scale(o.r1_every as f64));
        }
        Ok(loss)
    }

    fn update_discriminator(&mut self, k: usize, db: &Bound, loss: &Tensor) -> Result<()> {
        let grads = grads_of(loss, &db.trainable());
        let adam = self.state.config.adam.clone();
        adam_update(&mut self.state.discriminators[k], &grads, &mut self.state.adam_discriminators[k], &adam)
    }

    /// Inversion loss on `x` through E and G, with G bound by `g_trainable`.
    /// Returns the combined loss, its report, beta, and bound parameters.
    fn inversion(&mut self, x: &Tensor, d: usize, g_trainable: bool) -> Result<(Tensor, LossReport, f64, Bound, Bound)> {
        let eb = self.state.encoder.bind(true);
        // the last generator layer is always a leaf so beta can be probed
        let gb = self.state.generator.bind_where(|n| g_trainable || n == Generator::LAST_LAYER);
        let db = self.state.discriminators[d].bind(false);
        let style = self.nets.encoder.forward(&eb, x)?;
        let x_hat = self.synthesize(&gb, &style)?;
        let logits = self.nets.discriminator.forward(&db, &x_hat)?;
        let obj = self.state.config.objective.clone();
        let terms = objectives::idinv_terms(x, &x_hat, &logits, &self.features, &obj)?;
        let beta = if obj.use_adaptive_beta {
            objectives::adaptive_beta(&terms.rec, &terms.adv, &[gb.get(Generator::LAST_LAYER)], &obj)?
        } else {
            1.0
        };
        let loss = terms.combine(beta);
        check_loss("inversion loss", &loss)?;
        Ok((loss, terms.report(&obj, beta), beta, eb, gb))
    }

    fn finish(&mut self, hook: &mut dyn FnMut(Phase, &TrainState)) {
        let decay = self.state.config.ema_decay;
        ema_update(&self.state.mapping, &mut self.state.mapping_ema, decay);
        ema_update(&self.state.generator, &mut self.state.generator_ema, decay);
        self.state.iteration += 1;
        hook(Phase::Ema, &self.state);
    }

    /// Decoupled algorithm: D1 judges samples, D2 judges reconstructions, and
    /// the inversion step leaves F and G untouched.
    pub fn decoupled_step_with_hook(&mut self, x: &Tensor, hook: &mut dyn FnMut(Phase, &TrainState)) -> Result<StepReport> {
        self.require_mode(TrainMode::Decoupled)?;
        let n = x.dim(0);
        let mut phases = Vec::new();

        // Step I: L_D = -V(G o F, D1) - V(G o E, D2)
        let z = self.sample_latents(n);
        let (fake, recon) = no_grad(|| -> Result<_> {
            let (f, g, e) = (self.state.mapping.bind(false), self.state.generator.bind(false), self.state.encoder.bind(false));
            let fake = self.generate(&f, &g, &z)?;
            let style = self.nets.encoder.forward(&e, x)?;
            Ok((fake, self.synthesize(&g, &style)?))
        })?;
        let mut r1 = 0.0;
        let mut d_loss = 0.0;
        for (k, fakes) in [(0, &fake), (1, &recon)] {
            let db = self.state.discriminators[k].bind(true);
            let v = objectives::gan_value(&self.nets.discriminator.forward(&db, x)?, &self.nets.discriminator.forward(&db, fakes)?)?;
            let loss = self.disc_loss(k, &db, v, x, &mut r1)?;
            d_loss += check_loss("discriminator loss", &loss)?;
            self.update_discriminator(k, &db, &loss)?;
        }
        let r1 = self.r1_due().then_some(r1);
        phases.push((Phase::Discriminator, vec![Net::Discriminator(0), Net::Discriminator(1)]));
        hook(Phase::Discriminator, &self.state);

        // Step II: E only, through frozen G, judged by D2
        let mut e_report = LossReport::default();
        let mut beta = 1.0;
        for rep in 0..self.state.config.e_steps_per_g_step {
            let (loss, report, b, eb, _gb) = self.inversion(x, 1, false)?;
            let grads = grads_of(&loss, &eb.trainable());
            let adam = self.state.config.adam.clone();
            adam_update(&mut self.state.encoder, &grads, &mut self.state.adam_encoder, &adam)?;
            e_report = report;
            beta = b;
            phases.push((Phase::Inversion(rep), vec![Net::Encoder]));
            hook(Phase::Inversion(rep), &self.state);
        }

        // Step III: F and G on V(G o F, D1)
        let z = self.sample_latents(n);
        let (fb, gb, db) = (self.state.mapping.bind(true), self.state.generator.bind(true), self.state.discriminators[0].bind(false));
        let fake = self.generate(&fb, &gb, &z)?;
        let g_loss = objectives::generator_loss(&self.nets.discriminator.forward(&db, &fake)?)?;
        let g_val = check_loss("generator loss", &g_loss)?;
        self.update_mapping_and_generator(&g_loss, &fb, &gb)?;
        phases.push((Phase::Generator, vec![Net::Mapping, Net::Generator]));
        hook(Phase::Generator, &self.state);

        let iteration = self.state.iteration;
        self.finish(hook);
        phases.push((Phase::Ema, vec![]));
        Ok(StepReport { iteration, d_loss, e_loss: e_report, g_loss: g_val, beta, r1, phases })
    }

    /// Joint algorithm: one discriminator for both pathways, and the
    /// inversion step updates E and G together.
    pub fn joint_step_with_hook(&mut self, x: &Tensor, hook: &mut dyn FnMut(Phase, &TrainState)) -> Result<StepReport> {
        self.require_mode(TrainMode::Joint)?;
        let n = x.dim(0);
        let lambda_adv = self.state.config.objective.lambda_adv;
        let mut phases = Vec::new();

        // Step I: L_D = -V_AEGAN
        let z = self.sample_latents(n);
        let (fake, recon) = no_grad(|| -> Result<_> {
            let (f, g, e) = (self.state.mapping.bind(false), self.state.generator.bind(false), self.state.encoder.bind(false));
            let fake = self.generate(&f, &g, &z)?;
            let style = self.nets.encoder.forward(&e, x)?;
            Ok((fake, self.synthesize(&g, &style)?))
        })?;
        let db = self.state.discriminators[0].bind(true);
        let d = &self.nets.discriminator;
        let v = objectives::aegan_value(&d.forward(&db, x)?, &d.forward(&db, &recon)?, &d.forward(&db, &fake)?, lambda_adv)?;
        let mut r1 = 0.0;
        let loss = self.disc_loss(0, &db, v, x, &mut r1)?;
        let d_loss = check_loss("discriminator loss", &loss)?;
        self.update_discriminator(0, &db, &loss)?;
        let r1 = self.r1_due().then_some(r1);
        phases.push((Phase::Discriminator, vec![Net::Discriminator(0)]));
        hook(Phase::Discriminator, &self.state);

        // Step II: E and G on the inversion loss; G shares its optimizer with Step III
        let mut e_report = LossReport::default();
        let mut beta = 1.0;
        for rep in 0..self.state.config.e_steps_per_g_step {
            let (loss, report, b, eb, gb) = self.inversion(x, 0, true)?;
            let et = eb.trainable();
            let gt = gb.trainable();
            let mut all: Vec<(&str, &Tensor)> = et.clone();
            all.extend(gt.iter().copied());
            let mut grads = grads_of(&loss, &all);
            let g_grads: BTreeMap<String, Vec<f64>> = gt.iter().map(|(k, _)| (k.to_string(), grads.remove(*k).unwrap())).collect();
            let adam = self.state.config.adam.clone();
            adam_update(&mut self.state.encoder, &grads, &mut self.state.adam_encoder, &adam)?;
            adam_update(&mut self.state.generator, &g_grads, &mut self.state.adam_generator, &adam)?;
            e_report = report;
            beta = b;
            phases.push((Phase::Inversion(rep), vec![Net::Encoder, Net::Generator]));
            hook(Phase::Inversion(rep), &self.state);
        }

        // Step III: F and G on V_AEGAN, non-saturating over both fake pathways
        let z = self.sample_latents(n);
        let (fb, gb) = (self.state.mapping.bind(true), self.state.generator.bind(true));
        let (eb, db) = (self.state.encoder.bind(false), self.state.discriminators[0].bind(false));
        let fake = self.generate(&fb, &gb, &z)?;
        let style = no_grad(|| self.nets.encoder.forward(&eb, x))?;
        let recon = self.synthesize(&gb, &style)?;
        let d = &self.nets.discriminator;
        let g_loss = objectives::generator_loss(&d.forward(&db, &recon)?)?
            .scale(lambda_adv)
            .add(&objectives::generator_loss(&d.forward(&db, &fake)?)?.scale(1.0 - lambda_adv));
        let g_val = check_loss("generator loss", &g_loss)?;
        self.update_mapping_and_generator(&g_loss, &fb, &gb)?;
        phases.push((Phase::Generator, vec![Net::Mapping, Net::Generator]));
        hook(Phase::Generator, &self.state);

        let iteration = self.state.iteration;
        self.finish(hook);
        phases.push((Phase::Ema, vec![]));
        Ok(StepReport { iteration, d_loss, e_loss: e_report, g_loss: g_val, beta, r1, phases })
    }

    fn update_mapping_and_generator(&mut self, loss: &Tensor, fb: &Bound, gb: &Bound) -> Result<()> {
        let ft = fb.trainable();
        let mut all = ft.clone();
        all.extend(gb.trainable());
        let mut grads = grads_of(loss, &all);
        let f_grads: BTreeMap<String, Vec<f64>> = ft.iter().map(|(k, _)| (k.to_string(), grads.remove(*k).unwrap())).collect();
        let adam = self.state.config.adam.clone();
        adam_update(&mut self.state.mapping, &f_grads, &mut self.state.adam_mapping, &adam)?;
        adam_update(&mut self.state.generator, &grads, &mut self.state.adam_generator, &adam)
    }

    /// Attaches a seeded minibatch sampler over a dataset of `len` items.
    pub fn attach_sampler(&mut self, len: usize) -> Result<()> {
        let seed = self.state.config.seed ^ 0x5eed_da7a;
        self.state.sampler = Some(MinibatchSampler::new(len, self.state.config.batch_size, seed)?);
        Ok(())
    }

    /// Trains until `state.iteration == until`, drawing batches from the
    /// state's sampler (attached on first use). `on_step` sees every report.
    pub fn train_until(
        &mut self,
        data: &Dataset,
        until: u64,
        on_step: &mut dyn FnMut(&Trainer, &StepReport) -> Result<()>,
    ) -> Result<()> {
        if self.state.sampler.is_none() {
            self.attach_sampler(data.len())?;
        }
        while self.state.iteration < until {
            let batch = self.state.sampler.as_mut().expect("attached above").next_batch(data);
            let report = self.step(&batch)?;
            on_step(self, &report)?;
        }
        Ok(())
    }
}

impl fmt::Debug for Trainer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trainer").field("mode", &self.state.config.mode).field("iteration", &self.state.iteration).finish()
    }
}

/// Copy of `p` with every value replaced by `f(name, index, value)`.
pub fn map_params(p: &ParamSet, f: impl Fn(&str, usize, f64) -> f64) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, a) in p.iter() {
        let data = a.data.iter().enumerate().map(|(i, &v)| f(name, i, v)).collect();
        out.insert(name.clone(), ParamArray { shape: a.shape.clone(), data });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, ParamArray { shape: vec![1], data: vec![v] });
        p
    }

    #[test]
    fn adam_matches_hand_arithmetic() {
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = one("w", 1.0);
        let mut st = AdamState::for_params(&p);
        let g: BTreeMap<String, Vec<f64>> = [("w".to_string(), vec![0.5])].into();
        adam_update(&mut p, &g, &mut st, &cfg).unwrap();
        // m = 0.05, v = 0.00025, mh = 0.5, vh = 0.25, step = 0.1 * 0.5 / (0.5 + 1e-8)
        let want = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p.get("w").unwrap().data[0] - want).abs() < 1e-10);
        assert!((st.m.get("w").unwrap().data[0] - 0.05).abs() < 1e-15);
        assert!((st.v.get("w").unwrap().data[0] - 0.00025).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_grad_and_zero_lr() {
        let cfg = AdamConfig { lr: 0.1, beta1: 0.5, beta2: 0.9, eps: 1e-8 };
        let mut p = one("w", 2.0);
        let mut st = AdamState::for_params(&p);
        st.m.get_mut("w").unwrap().data[0] = 0.4;
        st.v.get_mut("w").unwrap().data[0] = 0.0;
        let zero: BTreeMap<String, Vec<f64>> = [("w".to_string(), vec![0.0])].into();
        let lr0 = AdamConfig { lr: 0.0, ..cfg.clone() };
        adam_update(&mut p, &zero, &mut st, &lr0).unwrap();
        assert_eq!(p.get("w").unwrap().data[0], 2.0);
        assert_eq!(st.m.get("w").unwrap().data[0], 0.2);

        let mut q = one("w", 2.0);
        let mut st = AdamState::for_params(&q);
        adam_update(&mut q, &zero, &mut st, &cfg).unwrap();
        assert_eq!(q.get("w").unwrap().data[0], 2.0);
    }

    #[test]
    fn adam_rejects_non_finite_without_touching_state() {
        let mut p = one("layer.weight", 1.0);
        let mut st = AdamState::for_params(&p);
        let g: BTreeMap<String, Vec<f64>> = [("layer.weight".to_string(), vec![f64::NAN])].into();
        let err = adam_update(&mut p, &g, &mut st, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("layer.weight"));
        assert_eq!(st.step, 0);
        assert_eq!(p.get("layer.weight").unwrap().data[0], 1.0);
    }

    #[test]
    fn ema_cases() {
        let p = one("w", 3.0);
        let mut e = one("w", 1.0);
        ema_update(&p, &mut e, 0.0);
        assert_eq!(e, p);
        let mut e = p.clone();
        ema_update(&p, &mut e, 0.999);
        assert_eq!(e, p);
        let mut e = one("w", 1.0);
        ema_update(&p, &mut e, 0.75);
        assert!((e.get("w").unwrap().data[0] - (0.75 * 1.0 + 0.25 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.e_steps_per_g_step = 0;
        assert!(c.validate().is_err());
        let c = TrainConfig { ema_decay: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
