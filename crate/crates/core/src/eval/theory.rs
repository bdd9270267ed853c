//! Numerical checks of the recursion, the least-squares identity and the
//! one-step delta method.

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::denoiser::DenoiserModel;
use crate::diffusion::{DiffusionSchedule, EpsModel};
use crate::error::{invalid_arg, shape_err, Result};
use crate::laplace::{DenseCovariance, Posterior};
use crate::linalg::{pinv_quadratic_form, pinv_quadratic_form_svd, IndexSet, Matrix};
use crate::rng::Rng;
use crate::uncertainty::{recursive_accumulation_with, unrolled_accumulation_with};

/// Eigenvalue cutoff of the SVD route, relative to the largest.
pub const LEMMA1_RCOND: f64 = 1e-12;

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviationSummary {
    pub trials: usize,
    pub max_relative_deviation: f64,
    pub deviations: Vec<f64>,
}

impl DeviationSummary {
    fn from_deviations(deviations: Vec<f64>) -> Self {
        let max_relative_deviation = deviations.iter().fold(0.0, |m: f64, v| m.max(*v));
        Self { trials: deviations.len(), max_relative_deviation, deviations }
    }
}

/// Random instances with `d ≤ 4`, `p ≤ 32`, `2 ≤ T ≤ 8`, cosine coefficients and
/// a random SPD covariance; compares `tr Σ_0` from the recursion against the
/// unrolled sum.
pub fn unroll_check(instances: usize, rng: &mut Rng) -> Result<DeviationSummary> {
    let mut deviations = Vec::with_capacity(instances);
    for _ in 0..instances {
        let d = rng.random_range(1..=4);
        let p = rng.random_range(1..=32);
        let steps = rng.random_range(2..=8);
        let schedule = DiffusionSchedule::cosine(steps)?;
        let a: Vec<f64> = (1..=steps).map(|t| schedule.a(t)).collect();
        let b: Vec<f64> = (1..=steps).map(|t| schedule.b(t)).collect();
        let js: Vec<Matrix> = (0..steps).map(|_| gaussian(d, p, rng)).collect();
        let g = gaussian(p, p, rng);
        let mut sigma = g.gram().scale(1.0 / p as f64);
        sigma.add_diagonal(0.1);
        let post = DenseCovariance::new(IndexSet::full(p)?, sigma)?;
        let rec = recursive_accumulation_with(&a, &b, &js, &post)?.trace();
        let unr = unrolled_accumulation_with(&a, &b, &js, &post)?.trace();
        deviations.push(relative((rec - unr).abs(), unr.abs()));
    }
    Ok(DeviationSummary::from_deviations(deviations))
}

/// `‖Bᵀ(AAᵀ)⁺B − X⋆ᵀX⋆‖_F / ‖X⋆ᵀX⋆‖_F` (absolute when the right side is 0).
pub fn lemma1_deviation(a: &Matrix, b: &Matrix) -> Result<f64> {
    let ls = pinv_quadratic_form(a, b)?;
    let svd = pinv_quadratic_form_svd(a, b, LEMMA1_RCOND)?;
    Ok(relative(svd.sub(&ls)?.frobenius_norm(), ls.frobenius_norm()))
}

/// Random Gaussian `A ∈ ℝ^{p×k}`, `B ∈ ℝ^{p×ℓ}` with `k, ℓ < p ≤ 40`.
pub fn lemma1_check(trials: usize, rng: &mut Rng) -> Result<DeviationSummary> {
    if trials == 0 {
        return Err(invalid_arg!("lemma check needs at least one trial"));
    }
    let mut deviations = Vec::with_capacity(trials);
    for _ in 0..trials {
        let p = rng.random_range(2..=40);
        let k = rng.random_range(1..p);
        let l = rng.random_range(1..p);
        let a = gaussian(p, k, rng);
        let b = gaussian(p, l, rng);
        deviations.push(lemma1_deviation(&a, &b)?);
    }
    Ok(DeviationSummary::from_deviations(deviations))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prop1Check {
    pub draws: usize,
    /// Trace of the sample covariance of `a_t x_t − b_t ε_θ(x_t, t)`.
    pub mc_trace: f64,
    /// `b_t² tr(J_t Σ_θ J_tᵀ)`
    pub analytic_trace: f64,
    pub relative_error: f64,
}

/// Monte Carlo covariance of the one-step mean under `θ ~ N(θ̂, Σ_θ)`
/// against its linearization.
pub fn prop1_mc_check<P: Posterior + ?Sized>(
    model: &DenoiserModel,
    posterior: &P,
    schedule: &DiffusionSchedule,
    x_t: &[f64],
    t: usize,
    draws: usize,
    rng: &mut Rng,
) -> Result<Prop1Check> {
    if draws < 2 {
        return Err(invalid_arg!("Monte Carlo covariance needs at least 2 draws"));
    }
    let d = model.config().data_dim;
    if x_t.len() != d {
        return Err(shape_err!("state of length {} for a {d}-dim model", x_t.len()));
    }
    if t == 0 || t > schedule.steps() {
        return Err(invalid_arg!("step {t} outside 1..={}", schedule.steps()));
    }
    let idx = posterior.index_set();
    let (a, b) = (schedule.a(t), schedule.b(t));
    let x = Matrix::from_vec(1, d, x_t.to_vec())?;
    let mut means = Matrix::zeros(draws, d);
    let base = model.params().values();
    for s in 0..draws {
        let xi: Vec<f64> = (0..idx.len()).map(|_| StandardNormal.sample(rng)).collect();
        let delta = posterior.draw(&xi)?;
        let mut values = base.to_vec();
        for (&q, dq) in idx.as_slice().iter().zip(&delta) {
            values[q] += dq;
        }
        let eps = model.with_values(values)?.predict(&x, t)?;
        for (k, m) in means.row_mut(s).iter_mut().enumerate() {
            *m = a * x_t[k] - b * eps[(0, k)];
        }
    }
    let mut mc_trace = 0.0;
    for k in 0..d {
        let col = means.column(k);
        let mean = col.iter().sum::<f64>() / draws as f64;
        mc_trace += col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (draws - 1) as f64;
    }
    let j = model.param_jacobian_columns(x_t, t, idx)?;
    let analytic_trace = b * b * posterior.quadratic_form(&j)?.trace();
    Ok(Prop1Check {
        draws,
        mc_trace,
        analytic_trace,
        relative_error: relative((mc_trace - analytic_trace).abs(), analytic_trace),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::ModelConfig;
    use crate::laplace::ZeroPosterior;
    use crate::rng::rng_from_seed;

    #[test]
    fn unroll_matches_recursion() {
        let s = unroll_check(100, &mut rng_from_seed(1)).unwrap();
        assert!(s.max_relative_deviation < 1e-10, "{s:?}");
    }

    #[test]
    fn lemma1_examples() {
        let a = Matrix::from_fn(6, 3, |i, j| if i == j { (j + 1) as f64 } else { 0.0 });
        assert!(lemma1_deviation(&a, &a).unwrap() < 1e-10);
        let ls = pinv_quadratic_form(&a, &a).unwrap();
        assert!(ls.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-12);
        assert_eq!(lemma1_deviation(&a, &Matrix::zeros(6, 2)).unwrap(), 0.0);
        let s = lemma1_check(100, &mut rng_from_seed(2)).unwrap();
        assert!(s.max_relative_deviation < 1e-8, "{s:?}");
    }

    fn tiny() -> (DenoiserModel, DiffusionSchedule) {
        let cfg = ModelConfig { data_dim: 3, hidden: 8, n_blocks: 1, time_embed_dim: 4, total_steps: 20 };
        (DenoiserModel::init(cfg, 3).unwrap(), DiffusionSchedule::cosine(20).unwrap())
    }

    #[test]
    fn prop1_zero_posterior() {
        let (model, schedule) = tiny();
        let zero = ZeroPosterior::new(IndexSet::full(model.param_count()).unwrap());
        let c = prop1_mc_check(&model, &zero, &schedule, &[0.1, -0.3, 0.5], 7, 8, &mut rng_from_seed(4)).unwrap();
        assert_eq!((c.mc_trace, c.analytic_trace, c.relative_error), (0.0, 0.0, 0.0));
    }

    #[test]
    fn prop1_head_posterior_is_exact_up_to_mc_error() {
        let (model, schedule) = tiny();
        let head = model.last_layer_indices();
        let sigma = Matrix::from_fn(head.len(), head.len(), |i, j| if i == j { 0.04 } else { 0.0 });
        let post = DenseCovariance::new(head, sigma).unwrap();
        let c = prop1_mc_check(&model, &post, &schedule, &[0.4, 0.1, -0.7], 11, 4096, &mut rng_from_seed(5)).unwrap();
        assert!(c.relative_error < 0.05, "{c:?}");
    }

    #[test]
    fn prop1_nonlinear_small_scale() {
        let (model, schedule) = tiny();
        let p = model.param_count();
        let sigma = Matrix::from_fn(p, p, |i, j| if i == j { 1e-4 } else { 0.0 });
        let post = DenseCovariance::new(IndexSet::full(p).unwrap(), sigma).unwrap();
        let c = prop1_mc_check(&model, &post, &schedule, &[0.4, 0.1, -0.7], 11, 4096, &mut rng_from_seed(6)).unwrap();
        assert!(c.relative_error < 0.1, "{c:?}");
    }
}
