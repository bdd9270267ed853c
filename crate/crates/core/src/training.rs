//! AdamW with cosine learning-rate decay, global-norm clipping and an EMA of
//! the parameters.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, weighted::WeightedIndex};

use crate::datasets::Dataset;
use crate::denoiser::{Batch, DenoiserModel};
use crate::diffusion::DiffusionSchedule;
use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::math::{cos, pow, sqrt};
use crate::rng::rng_from_seed;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub weight_decay: f64,
    pub batch: usize,
    pub steps: usize,
    pub grad_clip: f64,
    pub ema_decay: f64,
    /// Sample timesteps with probability ∝ sigmoid(log SNR) instead of
    /// uniformly.
    pub log_snr_weighting: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            adam_betas: (0.9, 0.999),
            weight_decay: 1e-4,
            batch: 512,
            steps: 20_000,
            grad_clip: 1.0,
            ema_decay: 0.999,
            log_snr_weighting: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.adam_betas;
        if !(self.lr > 0.0) {
            return Err(invalid_arg!("learning rate must be positive, got {}", self.lr));
        }
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(invalid_arg!("Adam betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(invalid_arg!("EMA decay must lie in [0, 1], got {}", self.ema_decay));
        }
        if self.batch == 0 {
            return Err(invalid_arg!("batch size must be positive"));
        }
        if !(self.grad_clip > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(invalid_arg!("gradient clip must be positive and weight decay non-negative"));
        }
        Ok(())
    }

    /// Cosine decay from `lr` to zero over `steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps == 0 {
            return self.lr;
        }
        let frac = step.min(self.steps) as f64 / self.steps as f64;
        0.5 * self.lr * (1.0 + cos(core::f64::consts::PI * frac))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Updates applied so far.
    pub t: u64,
    /// Steps dropped because the gradient was not finite.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(p: usize) -> Self {
        Self { m: vec![0.0; p], v: vec![0.0; p], t: 0, skipped: 0 }
    }
}

/// One AdamW update at schedule position `step`. Returns `false` (and bumps
/// `state.skipped`) when the gradient has a non-finite entry.
pub fn adamw_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, config: &TrainConfig, step: usize) -> Result<bool> {
    if params.len() != grad.len() || state.m.len() != params.len() {
        return Err(shape_err!("params {}, grad {}, optimizer state {}", params.len(), grad.len(), state.m.len()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        state.skipped += 1;
        return Ok(false);
    }
    let norm = norm2(grad);
    let clip = if norm > config.grad_clip { config.grad_clip / norm } else { 1.0 };
    let (b1, b2) = config.adam_betas;
    state.t += 1;
    let c1 = 1.0 - pow(b1, state.t as f64);
    let c2 = 1.0 - pow(b2, state.t as f64);
    let lr = config.lr_at(step);
    for i in 0..params.len() {
        let g = grad[i] * clip;
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= lr * (mhat / (sqrt(vhat) + ADAM_EPS) + config.weight_decay * params[i]);
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub shadow: Vec<f64>,
    pub decay: f64,
}

impl EmaState {
    pub fn new(initial: &[f64], decay: f64) -> Self {
        Self { shadow: initial.to_vec(), decay }
    }

    /// `shadow ← decay·shadow + (1−decay)·params`
    pub fn update(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.shadow.len() {
            return Err(shape_err!("EMA over {} values updated with {}", self.shadow.len(), params.len()));
        }
        let d = self.decay;
        for (s, p) in self.shadow.iter_mut().zip(params) {
            *s = d * *s + (1.0 - d) * p;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Raw parameters after the last step.
    pub model: DenoiserModel,
    /// EMA parameters, the point estimate `θ̂` used downstream.
    pub ema_model: DenoiserModel,
    /// Batch loss at each step, before the update.
    pub losses: Vec<f64>,
    pub skipped_steps: u64,
}

/// Draws training timesteps, uniformly or ∝ `ᾱ_t` (= sigmoid of log SNR).
pub struct TimestepSampler {
    weighted: Option<WeightedIndex<f64>>,
    steps: usize,
}

impl TimestepSampler {
    pub fn new(schedule: &DiffusionSchedule, log_snr_weighting: bool) -> Result<Self> {
        let weighted = if log_snr_weighting {
            let w: Vec<f64> = (1..=schedule.steps()).map(|t| snr_weight(schedule, t)).collect();
            Some(WeightedIndex::new(w).map_err(|e| Error::InvalidArgument(alloc::format!("{e}")))?)
        } else {
            None
        };
        Ok(Self { weighted, steps: schedule.steps() })
    }

    pub fn sample(&self, rng: &mut crate::rng::Rng) -> usize {
        match &self.weighted {
            Some(w) => w.sample(rng) + 1,
            None => rng.random_range(1..=self.steps),
        }
    }
}

/// `sigmoid(log(ᾱ_t/(1−ᾱ_t)))`, which equals `ᾱ_t`.
pub fn snr_weight(schedule: &DiffusionSchedule, t: usize) -> f64 {
    let bar = schedule.bar_alpha(t);
    crate::math::sigmoid(crate::math::log(bar / (1.0 - bar)))
}

/// Draws a random training batch: rows of `data` with replacement, steps,
/// and standard-normal noise.
pub fn draw_batch(data: &Matrix, size: usize, sampler: &TimestepSampler, rng: &mut crate::rng::Rng) -> Batch {
    let d = data.cols();
    let mut x0 = Matrix::zeros(size, d);
    let mut t = Vec::with_capacity(size);
    let mut eps = Matrix::zeros(size, d);
    for i in 0..size {
        let j = rng.random_range(0..data.rows());
        x0.row_mut(i).copy_from_slice(data.row(j));
        t.push(sampler.sample(rng));
        for v in eps.row_mut(i) {
            *v = StandardNormal.sample(rng);
        }
    }
    Batch { x0, t, eps }
}

pub fn train(model: &DenoiserModel, dataset: &Dataset, schedule: &DiffusionSchedule, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.dim() != model.config().data_dim {
        return Err(shape_err!("dataset dimension {} for a {}-dim model", dataset.dim(), model.config().data_dim));
    }
    if dataset.is_empty() {
        return Err(invalid_arg!("empty dataset"));
    }
    if schedule.steps() != model.config().total_steps {
        return Err(invalid_arg!("schedule has {} steps but the model embeds {}", schedule.steps(), model.config().total_steps));
    }
    let mut current = model.clone();
    let mut state = AdamState::new(model.param_count());
    let mut ema = EmaState::new(model.params().values(), config.ema_decay);
    let sampler = TimestepSampler::new(schedule, config.log_snr_weighting)?;
    let mut rng = rng_from_seed(config.seed);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = draw_batch(&dataset.samples, config.batch, &sampler, &mut rng);
        let (loss, grad) = current.loss_and_grad(&batch, schedule)?;
        losses.push(loss);
        adamw_step(current.params_mut().values_mut(), &grad, &mut state, config, step)?;
        ema.update(current.params().values())?;
    }
    let ema_model = current.with_values(ema.shadow)?;
    Ok(TrainOutcome { model: current, ema_model, losses, skipped_steps: state.skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, GeneratorConfig, SineParams};
    use crate::denoiser::ModelConfig;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let cfg = TrainConfig { weight_decay: 0.0, steps: 10, ..Default::default() };
        let mut p = vec![0.3, -1.2];
        let mut s = AdamState::new(2);
        adamw_step(&mut p, &[0.0, 0.0], &mut s, &cfg, 0).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn quadratic_descent() {
        let cfg = TrainConfig { lr: 0.05, weight_decay: 0.0, steps: 500, grad_clip: 1e9, ..Default::default() };
        let mut p = vec![1.0, 1.0];
        let mut s = AdamState::new(2);
        for step in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adamw_step(&mut p, &g, &mut s, &cfg, step).unwrap();
        }
        assert!(norm2(&p) < 0.01 * 2f64.sqrt(), "{p:?}");
    }

    #[test]
    fn clipping_matches_prescaled_gradient() {
        let cfg = TrainConfig { grad_clip: 1.0, steps: 10, ..Default::default() };
        let g = vec![6.0, 8.0];
        let (mut p1, mut p2) = (vec![0.5, 0.5], vec![0.5, 0.5]);
        let (mut s1, mut s2) = (AdamState::new(2), AdamState::new(2));
        adamw_step(&mut p1, &g, &mut s1, &cfg, 3).unwrap();
        adamw_step(&mut p2, &[0.6, 0.8], &mut s2, &cfg, 3).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        assert!(!adamw_step(&mut p, &[f64::NAN], &mut s, &cfg, 0).unwrap());
        assert_eq!((p[0], s.skipped, s.t), (1.0, 1, 0));
    }

    #[test]
    fn ema_examples() {
        let mut e = EmaState::new(&[1.0, 2.0], 0.0);
        e.update(&[5.0, 6.0]).unwrap();
        assert_eq!(e.shadow, vec![5.0, 6.0]);
        let mut e = EmaState::new(&[1.0, 2.0], 1.0);
        e.update(&[5.0, 6.0]).unwrap();
        assert_eq!(e.shadow, vec![1.0, 2.0]);
        let mut e = EmaState::new(&[4.0], 0.5);
        e.update(&[8.0]).unwrap();
        e.update(&[8.0]).unwrap();
        assert_eq!(e.shadow, vec![0.25 * 4.0 + 0.75 * 8.0]);
    }

    #[test]
    fn cosine_lr_endpoints() {
        let cfg = TrainConfig { lr: 1.0, steps: 100, ..Default::default() };
        assert_eq!(cfg.lr_at(0), 1.0);
        assert!((cfg.lr_at(50) - 0.5).abs() < 1e-15);
        assert!(cfg.lr_at(100).abs() < 1e-15);
    }

    #[test]
    fn snr_weighting_concentrates_on_early_steps() {
        let s = DiffusionSchedule::cosine(100).unwrap();
        assert!((snr_weight(&s, 40) - s.bar_alpha(40)).abs() < 1e-12);
        let sampler = TimestepSampler::new(&s, true).unwrap();
        let mut rng = rng_from_seed(0);
        let mean = (0..4000).map(|_| sampler.sample(&mut rng) as f64).sum::<f64>() / 4000.0;
        assert!(mean < 45.0, "{mean}");
    }

    fn tiny_setup() -> (DenoiserModel, Dataset, DiffusionSchedule) {
        let cfg = ModelConfig { data_dim: 10, hidden: 16, n_blocks: 1, time_embed_dim: 16, total_steps: 50 };
        let model = DenoiserModel::init(cfg, 1).unwrap();
        let data = generate(&GeneratorConfig::BimodalSine(SineParams { n: 256, ..Default::default() }), 2).unwrap();
        (model, data, DiffusionSchedule::cosine(50).unwrap())
    }

    #[test]
    fn zero_steps_returns_the_initial_model() {
        let (model, data, schedule) = tiny_setup();
        let out = train(&model, &data, &schedule, &TrainConfig { steps: 0, ..Default::default() }).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.ema_model, model);
    }

    #[test]
    fn short_run_is_deterministic_and_reduces_loss() {
        let (model, data, schedule) = tiny_setup();
        let cfg = TrainConfig { steps: 300, batch: 64, lr: 3e-3, ema_decay: 0.99, seed: 4, ..Default::default() };
        let a = train(&model, &data, &schedule, &cfg).unwrap();
        let b = train(&model, &data, &schedule, &cfg).unwrap();
        assert_eq!(a.ema_model, b.ema_model);
        assert_eq!(a.losses, b.losses);
        let head: f64 = a.losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = a.losses[280..].iter().sum::<f64>() / 20.0;
        assert!(tail < 0.7 * head, "{head} -> {tail}");
        let mut rng = rng_from_seed(99);
        let sampler = TimestepSampler::new(&schedule, false).unwrap();
        let eval = draw_batch(&data.samples, 2048, &sampler, &mut rng);
        let raw = a.model.loss(&eval, &schedule).unwrap();
        let ema = a.ema_model.loss(&eval, &schedule).unwrap();
        assert!(ema <= 1.2 * raw, "ema {ema} raw {raw}");
    }
}
