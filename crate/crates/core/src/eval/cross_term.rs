use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::denoiser::DenoiserModel;
use crate::diffusion::{reverse_step_batch, DiffusionSchedule, EpsModel, NoiseRealization, SamplerKind};
use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::laplace::{Posterior, DENSE_LIMIT};
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Damping used for the full-parameter posterior of the cross-term study.
pub const CROSS_TERM_LAMBDA: f64 = 1e-4;
pub const MIN_CROSS_TERM_DRAWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdTest {
    /// In percent.
    pub tau: f64,
    pub t_statistic: f64,
    /// `Pr(T_df ≤ t)`: small values reject `H₀: mean ≥ τ`.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CrossTermReport {
    pub draws: usize,
    pub u_no_cross: Vec<f64>,
    pub u_with_cross: Vec<f64>,
    /// `100·(u_withX − u_noX)/u_noX` per path.
    pub percent_changes: Vec<f64>,
    /// Statistics of `|Δu/u|` in percent.
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub standard_error: f64,
    pub df: usize,
    pub tests: Vec<ThresholdTest>,
}

/// One-sided t-tests of `H₀: mean ≥ τ` for each threshold.
pub fn one_sided_t_tests(values: &[f64], thresholds: &[f64]) -> Result<(f64, f64, f64, Vec<ThresholdTest>)> {
    let n = values.len();
    if n < 2 {
        return Err(invalid_arg!("t-test needs at least two values"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let std = crate::math::sqrt(var);
    let se = std / crate::math::sqrt(n as f64);
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::InvalidArgument(alloc::format!("{e}")))?;
    let tests = thresholds
        .iter()
        .map(|&tau| {
            let (t_statistic, p_value) = if se > 0.0 {
                let t = (mean - tau) / se;
                (t, dist.cdf(t))
            } else if mean < tau {
                (f64::NEG_INFINITY, 0.0)
            } else {
                (f64::INFINITY, 1.0)
            };
            ThresholdTest { tau, t_statistic, p_value }
        })
        .collect();
    Ok((mean, std, se, tests))
}

/// For each shared noise realization, runs the DDPM path at `θ̂` and at
/// `draws` posterior samples, estimates `Ĉov_j(t)` between `x_t(θ⁽ˢ⁾)` and
/// the linearized perturbation `J_t δθ⁽ˢ⁾`, and propagates
///
/// ```text
/// Var^noX_{t−1}   = a² Var^noX_t   + b² diag(J_t Σ_θ J_tᵀ)
/// Var^withX_{t−1} = a² Var^withX_t + b² diag(J_t Σ_θ J_tᵀ) − 2ab Ĉov(t)
/// ```
///
/// with `u = Σ_j Var_{0,j}`. The draws are shared by all paths.
pub fn cross_term_study<P: Posterior + ?Sized>(
    model: &DenoiserModel,
    posterior: &P,
    schedule: &DiffusionSchedule,
    noises: &[NoiseRealization],
    draws: usize,
    thresholds: &[f64],
    rng: &mut Rng,
) -> Result<CrossTermReport> {
    let p = model.param_count();
    if p > DENSE_LIMIT {
        return Err(Error::ResourceLimit { what: "cross-term parameter count", requested: p, limit: DENSE_LIMIT });
    }
    if draws < MIN_CROSS_TERM_DRAWS {
        return Err(invalid_arg!("cross-term study needs at least {MIN_CROSS_TERM_DRAWS} draws, got {draws}"));
    }
    if noises.len() < 2 {
        return Err(invalid_arg!("cross-term study needs at least two paths"));
    }
    let d = model.config().data_dim;
    let steps = schedule.steps();
    if let Some(nz) = noises.iter().find(|nz| nz.dim() != d || nz.steps() != steps) {
        return Err(shape_err!("noise realization {}x{} for d = {d}, T = {steps}", nz.steps(), nz.dim()));
    }
    let idx = posterior.index_set();
    let map = model.column_map(idx)?;
    let m = idx.len();

    let mut deltas = Matrix::zeros(m, draws);
    let mut models = Vec::with_capacity(draws);
    for s in 0..draws {
        let xi: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        let delta = posterior.draw(&xi)?;
        let mut values = model.params().values().to_vec();
        for (k, (&q, dq)) in idx.as_slice().iter().zip(&delta).enumerate() {
            values[q] += dq;
            deltas[(k, s)] = *dq;
        }
        models.push(model.with_values(values)?);
    }

    let n = noises.len();
    let mut xs = Matrix::zeros(n, d);
    for (i, nz) in noises.iter().enumerate() {
        xs.row_mut(i).copy_from_slice(&nz.x_t);
    }
    let mut particles = vec![xs.clone(); draws];
    let mut no_x = Matrix::zeros(n, d);
    let mut with_x = Matrix::zeros(n, d);
    let mut z = Matrix::zeros(n, d);
    let inv = 1.0 / (draws - 1) as f64;
    for t in (1..=steps).rev() {
        let ts = vec![t; n];
        let (eps, j) = model.jacobian_columns_batch(&xs, &ts, &map)?;
        let forms = posterior.quadratic_forms(&j, d)?;
        let lin = j.matmul(&deltas)?;
        let (a, b) = (schedule.a(t), schedule.b(t));
        for i in 0..n {
            for k in 0..d {
                let row = lin.row(i * d + k);
                let (mut mx, mut ml) = (0.0, 0.0);
                for s in 0..draws {
                    mx += particles[s][(i, k)];
                    ml += row[s];
                }
                mx /= draws as f64;
                ml /= draws as f64;
                let mut cov = 0.0;
                for s in 0..draws {
                    cov += (particles[s][(i, k)] - mx) * (row[s] - ml);
                }
                cov *= inv;
                let epi = b * b * forms[i][(k, k)];
                no_x[(i, k)] = a * a * no_x[(i, k)] + epi;
                with_x[(i, k)] = a * a * with_x[(i, k)] + epi - 2.0 * a * b * cov;
            }
        }
        for (i, nz) in noises.iter().enumerate() {
            z.row_mut(i).copy_from_slice(nz.z(t));
        }
        for (model_s, xs_s) in models.iter().zip(particles.iter_mut()) {
            let e = model_s.predict(xs_s, t)?;
            reverse_step_batch(schedule, SamplerKind::Ddpm, t, xs_s, &e, Some(&z))?;
        }
        reverse_step_batch(schedule, SamplerKind::Ddpm, t, &mut xs, &eps, Some(&z))?;
        if !xs.is_finite() || particles.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalBreakdown(alloc::format!("non-finite state at step {t}")));
        }
    }

    let u_no_cross: Vec<f64> = (0..n).map(|i| no_x.row(i).iter().sum()).collect();
    let u_with_cross: Vec<f64> = (0..n).map(|i| with_x.row(i).iter().sum()).collect();
    let percent_changes: Vec<f64> = u_no_cross
        .iter()
        .zip(&u_with_cross)
        .map(|(u0, u1)| if u1 == u0 { 0.0 } else { 100.0 * (u1 - u0) / u0 })
        .collect();
    if percent_changes.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBreakdown("cross-term change relative to a zero epistemic score".into()));
    }
    let abs: Vec<f64> = percent_changes.iter().map(|v| v.abs()).collect();
    let (mean, std, standard_error, tests) = one_sided_t_tests(&abs, thresholds)?;
    Ok(CrossTermReport {
        draws,
        u_no_cross,
        u_with_cross,
        max: abs.iter().copied().fold(0.0, f64::max),
        percent_changes,
        mean,
        std,
        standard_error,
        df: n - 1,
        tests,
    })
}
