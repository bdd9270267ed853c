use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::denoiser::DenoiserModel;
use crate::diffusion::{reverse_step_batch, DiffusionSchedule, EpsModel, NoiseRealization, SamplerKind};
use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::laplace::Posterior;
use crate::linalg::Matrix;
use crate::rng::Rng;

use super::UncertaintyScore;

/// Diagonal total-variance recursion of the BayesDiff-style baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveVariance {
    pub x0: Vec<f64>,
    /// `Var_0`, one entry per data dimension.
    pub variance0: Vec<f64>,
    /// Row `t − 1` is `Var_{t−1}`; empty unless requested.
    pub series: Option<Matrix>,
    /// Entry `t − 1` is `Σ_k Var_{t−1,k}`.
    pub trace_series: Vec<f64>,
    pub noise_seed: u64,
}

impl PredictiveVariance {
    pub fn trace(&self) -> f64 {
        self.variance0.iter().sum()
    }

    pub fn score(&self, sample_id: usize) -> UncertaintyScore {
        UncertaintyScore::new(sample_id, self.trace(), self.variance0.len())
    }
}

/// `Var_{t−1} = a_t² Var_t + b_t² V̂ar(ε_t) − 2 a_t b_t Ĉov(x_t, ε_t) + β̃_t`
/// per dimension, with the moments estimated over `draws` parameter samples
/// from `posterior`. Each draw follows its own path under the shared noise;
/// the draws are shared by every sample of the batch. `x̂₀` is the
/// point-estimate path.
#[allow(clippy::too_many_arguments)]
pub fn predictive_variance_batch<P: Posterior + ?Sized>(
    model: &DenoiserModel,
    schedule: &DiffusionSchedule,
    posterior: &P,
    draws: usize,
    sampler: SamplerKind,
    noises: &[NoiseRealization],
    keep_series: bool,
    rng: &mut Rng,
) -> Result<Vec<PredictiveVariance>> {
    if draws < 2 {
        return Err(invalid_arg!("the Monte Carlo variance needs at least 2 draws, got {draws}"));
    }
    let d = model.config().data_dim;
    let steps = schedule.steps();
    for nz in noises {
        if nz.dim() != d || nz.steps() != steps {
            return Err(shape_err!("noise realization {}x{} for d = {d}, T = {steps}", nz.steps(), nz.dim()));
        }
    }
    let idx = posterior.index_set();
    if idx.universe() != model.param_count() {
        return Err(invalid_arg!("posterior over {} parameters for a {}-parameter model", idx.universe(), model.param_count()));
    }
    let mut models = Vec::with_capacity(draws);
    for _ in 0..draws {
        let xi: Vec<f64> = (0..idx.len()).map(|_| StandardNormal.sample(rng)).collect();
        let delta = posterior.draw(&xi)?;
        let mut values = model.params().values().to_vec();
        for (&q, dq) in idx.as_slice().iter().zip(&delta) {
            values[q] += dq;
        }
        models.push(model.with_values(values)?);
    }

    let n = noises.len();
    let mut xs = Matrix::zeros(n, d);
    for (i, nz) in noises.iter().enumerate() {
        xs.row_mut(i).copy_from_slice(&nz.x_t);
    }
    let mut particles = vec![xs.clone(); draws];
    let mut var = Matrix::zeros(n, d);
    let mut series: Vec<Matrix> = if keep_series { vec![Matrix::zeros(steps, d); n] } else { Vec::new() };
    let mut trace_series = vec![vec![0.0; steps]; n];
    let mut z = Matrix::zeros(n, d);
    let inv = 1.0 / (draws - 1) as f64;
    for t in (1..=steps).rev() {
        for (i, nz) in noises.iter().enumerate() {
            z.row_mut(i).copy_from_slice(nz.z(t));
        }
        let eps_map = model.predict(&xs, t)?;
        let eps: Vec<Matrix> = models.iter().zip(&particles).map(|(m, p)| m.predict(p, t)).collect::<Result<_>>()?;
        let (a, b) = (schedule.a(t), schedule.b(t));
        let injected = if sampler.is_stochastic() { schedule.tilde_beta(t) } else { 0.0 };
        for i in 0..n {
            for k in 0..d {
                let (mut mx, mut me) = (0.0, 0.0);
                for s in 0..draws {
                    mx += particles[s][(i, k)];
                    me += eps[s][(i, k)];
                }
                mx /= draws as f64;
                me /= draws as f64;
                let (mut ve, mut c) = (0.0, 0.0);
                for s in 0..draws {
                    let de = eps[s][(i, k)] - me;
                    ve += de * de;
                    c += (particles[s][(i, k)] - mx) * de;
                }
                let v = &mut var[(i, k)];
                *v = a * a * *v + b * b * ve * inv - 2.0 * a * b * c * inv + injected;
            }
            trace_series[i][t - 1] = var.row(i).iter().sum();
            if keep_series {
                series[i].row_mut(t - 1).copy_from_slice(var.row(i));
            }
        }
        reverse_step_batch(schedule, sampler, t, &mut xs, &eps_map, Some(&z))?;
        for (p, e) in particles.iter_mut().zip(&eps) {
            reverse_step_batch(schedule, sampler, t, p, e, Some(&z))?;
        }
        if !xs.is_finite() || !var.is_finite() {
            return Err(Error::NumericalBreakdown(alloc::format!("non-finite state or variance at step {t}")));
        }
    }
    let mut series = series.into_iter();
    Ok(noises
        .iter()
        .enumerate()
        .map(|(i, nz)| PredictiveVariance {
            x0: xs.row(i).to_vec(),
            variance0: var.row(i).to_vec(),
            series: series.next(),
            trace_series: core::mem::take(&mut trace_series[i]),
            noise_seed: nz.seed,
        })
        .collect())
}

pub fn predictive_variance_rollout<P: Posterior + ?Sized>(
    model: &DenoiserModel,
    schedule: &DiffusionSchedule,
    last_layer_posterior: &P,
    draws: usize,
    sampler: SamplerKind,
    noise: &NoiseRealization,
    rng: &mut Rng,
) -> Result<PredictiveVariance> {
    let batch = [noise.clone()];
    Ok(predictive_variance_batch(model, schedule, last_layer_posterior, draws, sampler, &batch, true, rng)?.remove(0))
}
