use alloc::vec;
use alloc::vec::Vec;

use super::{propagate, EpistemicTrajectory, EstimatorKind};
use crate::denoiser::{ColumnMap, DenoiserModel};
use crate::diffusion::{reverse_step, reverse_step_batch, DiffusionSchedule, NoiseRealization, SamplerKind};
use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::laplace::{Posterior, PosteriorOperator};
use crate::linalg::{dot, CgOptions, Matrix};

/// Jacobian entries held at once during batched scoring.
const JACOBIAN_BUDGET: usize = 1 << 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlareOptions {
    pub sampler: SamplerKind,
    /// Also keep `Σ^ep_t` for every `t` divisible by the stride.
    pub stride: Option<usize>,
    pub keep_states: bool,
}

impl Default for FlareOptions {
    fn default() -> Self {
        Self { sampler: SamplerKind::Ddpm, stride: None, keep_states: false }
    }
}

enum Path<'a> {
    Sample { sampler: SamplerKind, noises: &'a [NoiseRealization] },
    Replay { states: &'a [Vec<Vec<f64>>] },
}

impl Path<'_> {
    fn len(&self) -> usize {
        match self {
            Path::Sample { noises, .. } => noises.len(),
            Path::Replay { states } => states.len(),
        }
    }
}

fn check_posterior<P: Posterior + ?Sized>(model: &DenoiserModel, posterior: &P) -> Result<ColumnMap> {
    model.column_map(posterior.index_set())
}

/// Samples one reverse path per noise realization and accumulates its
/// epistemic covariance. The index set is the posterior's, shared by all
/// samples.
pub fn flare_batch<P: Posterior + ?Sized>(
    model: &DenoiserModel,
    schedule: &DiffusionSchedule,
    posterior: &P,
    estimator: EstimatorKind,
    noises: &[NoiseRealization],
    options: FlareOptions,
) -> Result<Vec<EpistemicTrajectory>> {
    let d = model.config().data_dim;
    for n in noises {
        if n.dim() != d || n.steps() != schedule.steps() {
            return Err(shape_err!("noise realization {}x{} for d = {d}, T = {}", n.steps(), n.dim(), schedule.steps()));
        }
    }
    run(model, schedule, posterior, estimator, Path::Sample { sampler: options.sampler, noises }, options)
}

pub fn flare_sample<P: Posterior + ?Sized>(
    model: &DenoiserModel,
    schedule: &DiffusionSchedule,
    posterior: &P,
    estimator: EstimatorKind,
    noise: &NoiseRealization,
    options: FlareOptions,
) -> Result<EpistemicTrajectory> {
    Ok(flare_batch(model, schedule, posterior, estimator, core::slice::from_ref(noise), options)?.remove(0))
}

/// Runs the recursion along recorded paths (`x_T, …, x_0` each) with no
/// injected noise.
pub fn replay_epistemic<P: Posterior + ?Sized>(
    model: &DenoiserModel,
    schedule: &DiffusionSchedule,
    posterior: &P,
    estimator: EstimatorKind,
    paths: &[Vec<Vec<f64>>],
    stride: Option<usize>,
) -> Result<Vec<EpistemicTrajectory>> {
    let d = model.config().data_dim;
    for p in paths {
        if p.len() != schedule.steps() + 1 || p.iter().any(|x| x.len() != d) {
            return Err(shape_err!("recorded path must hold T + 1 = {} states of dimension {d}", schedule.steps() + 1));
        }
    }
    let options = FlareOptions { sampler: SamplerKind::MeanPath, stride, keep_states: true };
    run(model, schedule, posterior, estimator, Path::Replay { states: paths }, options)
}

/// The last-layer Laplace baseline: the same recursion with the head's
/// index set.
pub fn llla_rollout<P: Posterior + ?Sized>(
    model: &DenoiserModel,
    schedule: &DiffusionSchedule,
    last_layer_posterior: &P,
    noise: &NoiseRealization,
    options: FlareOptions,
) -> Result<EpistemicTrajectory> {
    if last_layer_posterior.index_set() != &model.last_layer_indices() {
        return Err(invalid_arg!("LLLA needs a posterior over the output head"));
    }
    flare_sample(model, schedule, last_layer_posterior, EstimatorKind::LastLayer, noise, options)
}

fn run<P: Posterior + ?Sized>(
    model: &DenoiserModel,
    schedule: &DiffusionSchedule,
    posterior: &P,
    estimator: EstimatorKind,
    path: Path<'_>,
    options: FlareOptions,
) -> Result<Vec<EpistemicTrajectory>> {
    if options.stride == Some(0) {
        return Err(invalid_arg!("stride must be positive"));
    }
    let map = check_posterior(model, posterior)?;
    let d = model.config().data_dim;
    let chunk = (JACOBIAN_BUDGET / (d * map.len().max(1))).max(1);
    let n = path.len();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let part = match &path {
            Path::Sample { sampler, noises } => Path::Sample { sampler: *sampler, noises: &noises[start..end] },
            Path::Replay { states } => Path::Replay { states: &states[start..end] },
        };
        out.extend(run_chunk(model, schedule, posterior, &map, estimator, part, options)?);
        start = end;
    }
    Ok(out)
}

fn run_chunk<P: Posterior + ?Sized>(
    model: &DenoiserModel,
    schedule: &DiffusionSchedule,
    posterior: &P,
    map: &ColumnMap,
    estimator: EstimatorKind,
    path: Path<'_>,
    options: FlareOptions,
) -> Result<Vec<EpistemicTrajectory>> {
    let d = model.config().data_dim;
    let steps = schedule.steps();
    let n = path.len();
    let mut xs = Matrix::zeros(n, d);
    for s in 0..n {
        let init = match &path {
            Path::Sample { noises, .. } => &noises[s].x_t[..],
            Path::Replay { states } => &states[s][0][..],
        };
        xs.row_mut(s).copy_from_slice(init);
    }
    let (stochastic, noise_seed) = match &path {
        Path::Sample { sampler, noises } => (sampler.is_stochastic(), noises.iter().map(|z| Some(z.seed)).collect()),
        Path::Replay { .. } => (false, vec![None; n]),
    };
    let keep_states = options.keep_states;
    let mut traj: Vec<EpistemicTrajectory> = (0..n)
        .map(|s| EpistemicTrajectory {
            x0: Vec::new(),
            states: if keep_states { vec![xs.row(s).to_vec()] } else { Vec::new() },
            sigma0: Matrix::zeros(d, d),
            retained: Vec::new(),
            trace_contrib: vec![0.0; steps],
            trace_series: vec![0.0; steps],
            aleatoric_trace: 0.0,
            estimator,
            noise_seed: noise_seed[s],
        })
        .collect();
    let mut z = Matrix::zeros(n, d);
    for t in (1..=steps).rev() {
        let ts = vec![t; n];
        let (eps, j) = model.jacobian_columns_batch(&xs, &ts, map)?;
        let deltas = posterior.quadratic_forms(&j, d)?;
        let (a, b) = (schedule.a(t), schedule.b(t));
        for (tr, mut delta) in traj.iter_mut().zip(deltas) {
            delta.scale_mut(b * b);
            tr.trace_contrib[t - 1] = delta.trace();
            tr.sigma0 = propagate(&tr.sigma0, a, &delta)?;
            tr.trace_series[t - 1] = tr.sigma0.trace();
            let injected = if stochastic { d as f64 * schedule.tilde_beta(t) } else { 0.0 };
            tr.aleatoric_trace = a * a * tr.aleatoric_trace + injected;
            if let Some(k) = options.stride {
                if t - 1 > 0 && (t - 1) % k == 0 {
                    tr.retained.push((t - 1, tr.sigma0.clone()));
                }
            }
        }
        match &path {
            Path::Sample { sampler, noises } => {
                for (s, nz) in noises.iter().enumerate() {
                    z.row_mut(s).copy_from_slice(nz.z(t));
                }
                reverse_step_batch(schedule, *sampler, t, &mut xs, &eps, Some(&z))?;
            }
            Path::Replay { states } => {
                for (s, st) in states.iter().enumerate() {
                    xs.row_mut(s).copy_from_slice(&st[steps - t + 1]);
                }
            }
        }
        if !xs.is_finite() {
            return Err(Error::NumericalBreakdown(alloc::format!("non-finite state at step {t}")));
        }
        if keep_states {
            for (s, tr) in traj.iter_mut().enumerate() {
                tr.states.push(xs.row(s).to_vec());
            }
        }
    }
    for (s, tr) in traj.iter_mut().enumerate() {
        tr.x0 = xs.row(s).to_vec();
    }
    Ok(traj)
}

/// `tr(Σ^ep_t)` obtained from per-output CG solves, never forming a `d × d`
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingTrace {
    pub x0: Vec<f64>,
    /// Entry `t − 1` is `tr(Σ^ep_{t−1})`.
    pub trace_series: Vec<f64>,
    pub cg_iterations: usize,
    pub max_relative_residual: f64,
}

impl StreamingTrace {
    pub fn trace(&self) -> f64 {
        self.trace_series[0]
    }
}

/// `tr Σ_{t−1} = a_t² tr Σ_t + b_t² Σ_k g_{t,k}ᵀ (H+λI)⁻¹ g_{t,k}`, each
/// `u_{t,k}` from one CG solve.
pub fn streaming_trace(
    model: &DenoiserModel,
    schedule: &DiffusionSchedule,
    posterior: &PosteriorOperator,
    sampler: SamplerKind,
    noise: &NoiseRealization,
    cg: CgOptions,
) -> Result<StreamingTrace> {
    let map = check_posterior(model, posterior)?;
    let d = model.config().data_dim;
    if noise.dim() != d || noise.steps() != schedule.steps() {
        return Err(shape_err!("noise realization {}x{} for d = {d}, T = {}", noise.steps(), noise.dim(), schedule.steps()));
    }
    let mut x = noise.x_t.clone();
    let mut trace = 0.0;
    let mut series = vec![0.0; schedule.steps()];
    let mut iterations = 0;
    let mut max_res: f64 = 0.0;
    for t in (1..=schedule.steps()).rev() {
        let xs = Matrix::from_vec(1, d, x.clone())?;
        let (eps, j) = model.jacobian_columns_batch(&xs, &[t], &map)?;
        let mut u_sum = 0.0;
        for k in 0..d {
            let g = j.row(k);
            let sol = posterior.cg(g, cg)?;
            iterations += sol.iterations;
            max_res = max_res.max(sol.relative_residual);
            u_sum += dot(g, &sol.x);
        }
        let (a, b) = (schedule.a(t), schedule.b(t));
        trace = a * a * trace + b * b * u_sum;
        series[t - 1] = trace;
        x = reverse_step(schedule, sampler, t, &x, eps.row(0), noise.z(t));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBreakdown(alloc::format!("non-finite state at step {t}")));
        }
    }
    Ok(StreamingTrace { x0: x, trace_series: series, cg_iterations: iterations, max_relative_residual: max_res })
}
