//! Epistemic covariance of the reverse diffusion state.
//!
//! Along a reverse path with the noise realization held fixed,
//! `x_{t−1} = a_t x_t − b_t ε_θ(x_t, t) + η_t` and linearizing in `θ` gives
//!
//! ```text
//! Σ_{t−1} = a_t² Σ_t + b_t² J_t Σ_θ J_tᵀ,        Σ_T = 0
//! Σ_0     = Σ_s (Π_{j<s} a_j)² b_s² J_s Σ_θ J_sᵀ
//! ```
//!
//! with `J_t = ∂ε_θ(x_t, t)/∂θ_I` restricted to the posterior's index set.

mod flare;
mod predictive;
mod sweep;

use alloc::vec::Vec;

pub use flare::{
    flare_batch, flare_sample, llla_rollout, replay_epistemic, streaming_trace, FlareOptions, StreamingTrace,
};
pub use predictive::{predictive_variance_batch, predictive_variance_rollout, PredictiveVariance};
pub use sweep::{keep_fraction_sweep, KeepFractionRow, SweepConfig};

use crate::denoiser::DenoiserModel;
use crate::diffusion::DiffusionSchedule;
use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::laplace::{assemble_ggn, Posterior, PosteriorKind, PosteriorOperator, DENSE_LIMIT};
use crate::linalg::{sample_uniform_indices, IndexSet, Matrix};
use crate::rng::Rng;

/// Which parameters carry the posterior, and how uncertainty is read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum EstimatorKind {
    /// Uniformly random subnetwork of `m` parameters.
    Flare { m: usize },
    /// Final affine layer only.
    LastLayer,
    /// Every parameter; dense posterior.
    FullFisher,
    /// Monte Carlo total-variance baseline over last-layer draws.
    PredictiveVariance { draws: usize },
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Flare { .. } => "flare",
            EstimatorKind::LastLayer => "llla",
            EstimatorKind::FullFisher => "full_fisher",
            EstimatorKind::PredictiveVariance { .. } => "bayesdiff_style",
        }
    }

    pub fn posterior_kind(&self) -> PosteriorKind {
        match self {
            EstimatorKind::Flare { .. } => PosteriorKind::Subnet,
            EstimatorKind::LastLayer | EstimatorKind::PredictiveVariance { .. } => PosteriorKind::LastLayer,
            EstimatorKind::FullFisher => PosteriorKind::FullDense,
        }
    }

    /// The parameter subset for `model`; FLARE draws it from `rng`.
    pub fn index_set(&self, model: &DenoiserModel, rng: &mut Rng) -> Result<IndexSet> {
        let p = model.param_count();
        match *self {
            EstimatorKind::Flare { m } => {
                if m == 0 || m > p {
                    return Err(invalid_arg!("subnetwork size {m} must lie in 1..={p}"));
                }
                sample_uniform_indices(p, m, rng)
            }
            EstimatorKind::LastLayer | EstimatorKind::PredictiveVariance { .. } => Ok(model.last_layer_indices()),
            EstimatorKind::FullFisher => {
                if p > DENSE_LIMIT {
                    return Err(Error::ResourceLimit { what: "full-Fisher parameter count", requested: p, limit: DENSE_LIMIT });
                }
                IndexSet::full(p)
            }
        }
    }
}

/// Draws the index set for `kind` and builds its damped GGN posterior.
#[allow(clippy::too_many_arguments)]
pub fn build_posterior(
    model: &DenoiserModel,
    data: &Matrix,
    schedule: &DiffusionSchedule,
    kind: EstimatorKind,
    lambda: f64,
    n_pairs: usize,
    index_rng: &mut Rng,
    pair_rng: &mut Rng,
) -> Result<PosteriorOperator> {
    let idx = kind.index_set(model, index_rng)?;
    let ggn = assemble_ggn(model, data, schedule, &idx, n_pairs, pair_rng)?;
    PosteriorOperator::new(kind.posterior_kind(), ggn, lambda)
}

/// Per-sample result of the epistemic recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct EpistemicTrajectory {
    pub x0: Vec<f64>,
    /// `x_T, …, x_0` when requested, else empty.
    pub states: Vec<Vec<f64>>,
    /// `Σ^ep_0`.
    pub sigma0: Matrix,
    /// `(t, Σ^ep_t)` at the retained stride, descending in `t`.
    pub retained: Vec<(usize, Matrix)>,
    /// Entry `t − 1` is `b_t² tr(J_t Σ_θ J_tᵀ)`.
    pub trace_contrib: Vec<f64>,
    /// Entry `t − 1` is `tr(Σ^ep_{t−1})`.
    pub trace_series: Vec<f64>,
    /// Trace of the accumulated injected-noise variance at `t = 0`.
    pub aleatoric_trace: f64,
    pub estimator: EstimatorKind,
    pub noise_seed: Option<u64>,
}

impl EpistemicTrajectory {
    pub fn trace(&self) -> f64 {
        self.sigma0.trace()
    }

    /// `Σ_t (Π_{j<t} a_j²)·trace_contrib[t]`, equal to `tr(Σ^ep_0)`.
    pub fn accumulated_trace(&self, schedule: &DiffusionSchedule) -> f64 {
        let mut discount = 1.0;
        let mut total = 0.0;
        for (i, c) in self.trace_contrib.iter().enumerate() {
            let t = i + 1;
            total += discount * c;
            discount *= schedule.a(t) * schedule.a(t);
        }
        total
    }

    pub fn score(&self, sample_id: usize) -> UncertaintyScore {
        UncertaintyScore::new(sample_id, self.trace(), self.x0.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UncertaintyScore {
    pub sample_id: usize,
    /// `tr(Σ^ep_0)/d`
    pub score: f64,
    pub raw_trace: f64,
}

impl UncertaintyScore {
    pub fn new(sample_id: usize, raw_trace: f64, dim: usize) -> Self {
        Self { sample_id, score: raw_trace / dim as f64, raw_trace }
    }
}

/// `b² J Σ Jᵀ`
pub fn one_step_projection<P: Posterior + ?Sized>(j: &Matrix, posterior: &P, b: f64) -> Result<Matrix> {
    let mut q = posterior.quadratic_form(j)?;
    q.scale_mut(b * b);
    Ok(q)
}

/// `a² Σ + Δ`, symmetrized.
pub fn propagate(sigma_prev: &Matrix, a: f64, delta: &Matrix) -> Result<Matrix> {
    if sigma_prev.shape() != delta.shape() || !delta.is_square() {
        return Err(shape_err!("covariance {:?} and increment {:?}", sigma_prev.shape(), delta.shape()));
    }
    let mut out = delta.clone();
    out.add_scaled(a * a, sigma_prev)?;
    out.symmetrize();
    Ok(out)
}

/// Closed-form `Σ^ep_0` from `jacobians[s − 1] = J_s`, `s = 1..=S`.
pub fn unrolled_accumulation<P: Posterior + ?Sized>(
    schedule: &DiffusionSchedule,
    jacobians: &[Matrix],
    posterior: &P,
) -> Result<Matrix> {
    let (a, b) = coefficients(schedule, jacobians.len())?;
    unrolled_accumulation_with(&a, &b, jacobians, posterior)
}

/// [`propagate`] from `Σ_S = 0` down to `Σ_0`.
pub fn recursive_accumulation<P: Posterior + ?Sized>(
    schedule: &DiffusionSchedule,
    jacobians: &[Matrix],
    posterior: &P,
) -> Result<Matrix> {
    let (a, b) = coefficients(schedule, jacobians.len())?;
    recursive_accumulation_with(&a, &b, jacobians, posterior)
}

fn coefficients(schedule: &DiffusionSchedule, len: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if len == 0 || len > schedule.steps() {
        return Err(invalid_arg!("{len} Jacobians for a {}-step schedule", schedule.steps()));
    }
    Ok(((1..=len).map(|t| schedule.a(t)).collect(), (1..=len).map(|t| schedule.b(t)).collect()))
}

fn check_coefficients(a: &[f64], b: &[f64], jacobians: &[Matrix]) -> Result<usize> {
    if jacobians.is_empty() || a.len() != jacobians.len() || b.len() != jacobians.len() {
        return Err(shape_err!("{} Jacobians with {} and {} coefficients", jacobians.len(), a.len(), b.len()));
    }
    Ok(jacobians[0].rows())
}

/// Unrolled sum with explicit coefficients `a[s − 1] = a_s`, `b[s − 1] = b_s`.
pub fn unrolled_accumulation_with<P: Posterior + ?Sized>(
    a: &[f64],
    b: &[f64],
    jacobians: &[Matrix],
    posterior: &P,
) -> Result<Matrix> {
    let d = check_coefficients(a, b, jacobians)?;
    let mut total = Matrix::zeros(d, d);
    let mut prefix = 1.0;
    for (s, j) in jacobians.iter().enumerate() {
        let term = one_step_projection(j, posterior, b[s])?;
        total.add_scaled(prefix * prefix, &term)?;
        prefix *= a[s];
    }
    total.symmetrize();
    Ok(total)
}

pub fn recursive_accumulation_with<P: Posterior + ?Sized>(
    a: &[f64],
    b: &[f64],
    jacobians: &[Matrix],
    posterior: &P,
) -> Result<Matrix> {
    let d = check_coefficients(a, b, jacobians)?;
    let mut sigma = Matrix::zeros(d, d);
    for s in (0..jacobians.len()).rev() {
        let delta = one_step_projection(&jacobians[s], posterior, b[s])?;
        sigma = propagate(&sigma, a[s], &delta)?;
    }
    Ok(sigma)
}
