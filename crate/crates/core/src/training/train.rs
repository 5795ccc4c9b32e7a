//! Alternating generator/discriminator updates over a set of triplets.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::KeyValues;
use crate::data::Triplet;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::renderer::{RenderConfig, RenderModel};
use crate::tensor::Tensor;
use crate::training::adam::Adam;
use crate::training::losses::{content_loss, discriminator_loss, generator_adversarial_loss, perceptual_loss, total_loss, LossWeights};
use crate::training::nets::{Discriminator, PerceptualNet};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub render: RenderConfig,
    pub weights: LossWeights,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    /// Checkpoint with weights for the perceptual network; seeded random weights otherwise.
    pub perceptual_weights: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            render: RenderConfig::default(),
            weights: LossWeights::default(),
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch: 2,
            steps: 1000,
            seed: 0,
            perceptual_weights: None,
        }
    }
}

impl TrainConfig {
    /// Overrides fields from configuration keys, consuming those it knows.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        apply_render_keys(&mut self.render, kv)?;
        kv.take_into("lambda_c", &mut self.weights.content)?;
        kv.take_into("lambda_p", &mut self.weights.perceptual)?;
        kv.take_into("lambda_a", &mut self.weights.adversarial)?;
        kv.take_into("lr", &mut self.lr)?;
        kv.take_into("beta1", &mut self.beta1)?;
        kv.take_into("beta2", &mut self.beta2)?;
        kv.take_into("batch", &mut self.batch)?;
        kv.take_into("steps", &mut self.steps)?;
        kv.take_into("seed", &mut self.seed)?;
        if let Some(p) = kv.take::<PathBuf>("perceptual_weights")? {
            self.perceptual_weights = Some(p);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.weights.validate()?;
        if self.batch == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("optimizer needs lr > 0 and betas in [0, 1)"));
        }
        Ok(())
    }
}

/// Reads renderer keys (`variant`, `k`, `m`, `d_s`, `d_f`, `channel_plan`, `eps`).
pub fn apply_render_keys(cfg: &mut RenderConfig, kv: &mut KeyValues) -> Result<()> {
    kv.take_into("variant", &mut cfg.variant)?;
    kv.take_into("k", &mut cfg.k)?;
    kv.take_into("m", &mut cfg.m)?;
    kv.take_into("d_s", &mut cfg.d_s)?;
    kv.take_into("d_f", &mut cfg.d_f)?;
    kv.take_into("eps", &mut cfg.eps)?;
    if let Some(plan) = kv.take_list("channel_plan")? {
        cfg.channel_plan = plan;
    }
    Ok(())
}

/// Batch-averaged losses of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub step: usize,
    pub content: f64,
    pub perceptual: f64,
    /// Generator's adversarial term.
    pub adversarial: f64,
    pub discriminator: f64,
    pub total: f64,
}

impl StepLosses {
    fn check(&self) -> Result<()> {
        let terms = [
            ("content", self.content),
            ("perceptual", self.perceptual),
            ("adversarial", self.adversarial),
            ("discriminator", self.discriminator),
            ("total", self.total),
        ];
        match terms.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::Training(format!(
                "{name} loss became {v} at step {}; lower the learning rate or check the data",
                self.step
            ))),
            None => Ok(()),
        }
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: RenderModel<f32>,
    pub discriminator: Discriminator,
    pub disc_params: ParamStore<f32>,
    perceptual: PerceptualNet<f32>,
    g_opt: Adam<f32>,
    d_opt: Adam<f32>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl Trainer {
    /// Initializes every network from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = RenderModel::new(config.render.clone(), config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let mut disc_params = ParamStore::new();
        let discriminator = Discriminator::new(&mut disc_params, &mut rng);
        let perceptual = match &config.perceptual_weights {
            Some(p) => PerceptualNet::load(p)?,
            None => PerceptualNet::new(config.seed.wrapping_add(0x5eed)),
        };
        let g_opt = Adam::new(&model.params, config.lr, config.beta1, config.beta2);
        let d_opt = Adam::new(&disc_params, config.lr, config.beta1, config.beta2);
        let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
        data_rng.set_stream(2);
        Ok(Self {
            config,
            model,
            discriminator,
            disc_params,
            perceptual,
            g_opt,
            d_opt,
            rng: data_rng,
            order: Vec::new(),
            cursor: 0,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Next batch, drawn from a fresh permutation of the data each epoch.
    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        (0..self.config.batch)
            .map(|_| {
                if self.cursor >= self.order.len() {
                    self.order = (0..n).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    /// One generator update followed by one discriminator update.
    pub fn step(&mut self, data: &[Triplet]) -> Result<StepLosses> {
        if data.is_empty() {
            return Err(Error::Training("no training triplets".into()));
        }
        let batch = self.next_batch(data.len());
        let w = self.config.weights;
        let inv = 1.0 / batch.len() as f32;

        let mut tape = Tape::<f32>::new();
        let gp = self.model.params.bind(&mut tape, true);
        let dp = self.disc_params.bind(&mut tape, false);
        let mut sums = [0.0f64; 3];
        let mut total = None;
        let mut fakes = Vec::with_capacity(batch.len());
        for &i in &batch {
            let t = &data[i];
            let c = tape.constant(t.content.clone());
            let s = tape.constant(t.style.clone());
            let g = tape.constant(t.ground_truth.clone());
            let out = self.model.renderer.forward(&mut tape, &gp, c, s)?;
            let lc = (w.content > 0.0).then(|| content_loss(&mut tape, out.image, g)).transpose()?;
            let lp = (w.perceptual > 0.0)
                .then(|| perceptual_loss(&mut tape, &self.perceptual, out.image, g))
                .transpose()?;
            let la = (w.adversarial > 0.0)
                .then(|| generator_adversarial_loss(&mut tape, &self.discriminator, &dp, out.image))
                .transpose()?;
            for (sum, term) in sums.iter_mut().zip([lc, lp, la]) {
                if let Some(v) = term {
                    *sum += tape.scalar(v) as f64;
                }
            }
            let li = total_loss(&mut tape, &w, lc, lp, la)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, li)?,
                None => li,
            });
            fakes.push(tape.value(out.image).clone());
        }
        let total = tape.scale(total.expect("batch is non-empty"), inv);
        let mut losses = StepLosses {
            step: self.step,
            content: sums[0] / batch.len() as f64,
            perceptual: sums[1] / batch.len() as f64,
            adversarial: sums[2] / batch.len() as f64,
            discriminator: 0.0,
            total: tape.scalar(total) as f64,
        };
        losses.check()?;
        let grads = gp.grads(&tape.backward(total)?);
        drop(tape);
        self.g_opt.step(&mut self.model.params, &grads)?;

        if w.adversarial > 0.0 {
            losses.discriminator = self.discriminator_step(data, &batch, fakes)?;
            losses.check()?;
        }
        self.step += 1;
        Ok(losses)
    }

    fn discriminator_step(&mut self, data: &[Triplet], batch: &[usize], fakes: Vec<Tensor<f32>>) -> Result<f64> {
        let mut tape = Tape::<f32>::new();
        let dp = self.disc_params.bind(&mut tape, true);
        let mut total = None;
        for (&i, fake) in batch.iter().zip(fakes) {
            let real = tape.constant(data[i].ground_truth.clone());
            let fake = tape.constant(fake);
            let l = discriminator_loss(&mut tape, &self.discriminator, &dp, real, fake)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, l)?,
                None => l,
            });
        }
        let total = tape.scale(total.expect("batch is non-empty"), 1.0 / batch.len() as f32);
        let value = tape.scalar(total) as f64;
        if !value.is_finite() {
            return Ok(value);
        }
        let grads = dp.grads(&tape.backward(total)?);
        self.d_opt.step(&mut self.disc_params, &grads)?;
        Ok(value)
    }
}

/// Trained generator and its per-step loss curve.
pub struct TrainOutcome {
    pub model: RenderModel<f32>,
    pub curve: Vec<StepLosses>,
}

/// Runs `config.steps` steps, calling `on_step` after each one.
pub fn train(config: TrainConfig, data: &[Triplet], mut on_step: impl FnMut(&StepLosses)) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Training("no training triplets".into()));
    }
    let steps = config.steps;
    let mut trainer = Trainer::new(config)?;
    let mut curve = Vec::with_capacity(steps);
    for _ in 0..steps {
        let l = trainer.step(data)?;
        on_step(&l);
        curve.push(l);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        curve,
    })
}
