use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::linalg::{dot, sample_uniform_indices, thin_svd, Matrix, ThinQr};
use crate::math::{log, sqrt};
use crate::rng::Rng;

/// Singular values below this fraction of the largest are treated as zero.
pub const SKETCH_RCOND: f64 = 1e-10;
/// Alignment below this is flagged rather than tested.
pub const MIN_ALIGNMENT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SketchInstanceSpec {
    pub p: usize,
    pub nd: usize,
    pub d: usize,
    /// Dimension of the rowspace of `J_pop`.
    pub rank: usize,
    /// Target `‖J_t P‖²_F / ‖J_t(I−P)‖²_F`.
    pub alignment: f64,
    /// Scales parameter column 0 of `J_pop` only, concentrating leverage on
    /// one sampled row.
    pub spike: Option<f64>,
}

impl Default for SketchInstanceSpec {
    fn default() -> Self {
        Self { p: 512, nd: 128, d: 4, rank: 8, alignment: 10.0, spike: None }
    }
}

/// Random `(J_pop, J_t)` with `J_popᵀ = G₁G₂/√r` of rank `r` and
/// `J_tᵀ = J_popᵀW + R`, `R` orthogonal to the rowspace of `J_pop` and scaled
/// to the requested alignment.
pub fn synthetic_sketch_instance(spec: &SketchInstanceSpec, rng: &mut Rng) -> Result<(Matrix, Matrix)> {
    let SketchInstanceSpec { p, nd, d, rank, alignment, spike } = *spec;
    if rank == 0 || rank > nd || rank >= p || d == 0 || !(alignment > 0.0) {
        return Err(invalid_arg!("invalid sketch instance {spec:?}"));
    }
    let mut gauss = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut *rng));
    let g1 = gauss(p, rank);
    let g2 = gauss(rank, nd).scale(1.0 / sqrt(rank as f64));
    let w = gauss(nd, d);
    let mut resid = gauss(p, d);
    let mut a = g1.matmul(&g2)?;
    let q = ThinQr::factor(&g1)?.q().clone();
    let proj = q.matmul(&q.matmul_tn(&resid)?)?;
    resid.add_scaled(-1.0, &proj)?;
    let signal = a.matmul(&w)?;
    let c = signal.frobenius_norm() / (sqrt(alignment) * resid.frobenius_norm());
    let mut b = signal;
    b.add_scaled(c, &resid)?;
    if let Some(s) = spike {
        a.row_mut(0).iter_mut().for_each(|v| *v *= s);
    }
    Ok((a.transpose(), b.transpose()))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SketchStudyReport {
    pub p: usize,
    pub m_grid: Vec<usize>,
    /// Mean of `|tr(V − Ṽ)|/tr(V)` per grid entry.
    pub mean_errors: Vec<f64>,
    pub trial_errors: Vec<Vec<f64>>,
    /// Least-squares slope of log mean error against log `m`, over grid
    /// entries with `m < p`.
    pub slope: Option<f64>,
    pub monotone: bool,
    pub error_at_full: f64,
    pub trace_v: f64,
    /// Numerical rank of `J_pop`.
    pub rank: usize,
    pub coherence: f64,
    pub condition_number: f64,
    /// `None` when `J_t` lies entirely in the rowspace.
    pub alignment: Option<f64>,
    pub low_alignment: bool,
}

struct PinvTrace {
    trace: f64,
    singular: Vec<f64>,
    rank: usize,
    u: Matrix,
}

/// `tr Bᵀ(AAᵀ)⁺B = ‖Σ_r⁻¹U_rᵀB‖²_F` over the numerical rank of `A`.
fn pinv_trace(a: &Matrix, b: &Matrix) -> Result<PinvTrace> {
    let svd = thin_svd(a)?;
    let top = svd.s.first().copied().unwrap_or(0.0);
    let rank = svd.s.iter().take_while(|&&s| s > SKETCH_RCOND * top && s > 0.0).count();
    let mut trace = 0.0;
    for k in 0..rank {
        let col = svd.u.column(k);
        for c in 0..b.cols() {
            let v = dot(&col, &b.column(c)) / svd.s[k];
            trace += v * v;
        }
    }
    Ok(PinvTrace { trace, singular: svd.s, rank, u: svd.u })
}

fn log_log_slope(m: &[usize], err: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = m.iter().zip(err).filter(|(_, e)| **e > 0.0).map(|(&m, &e)| (log(m as f64), log(e))).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

/// Relative error of the random-subnetwork trace `tr Ṽ` against the exact
/// `tr V = tr J_t(J_popᵀJ_pop)⁺J_tᵀ` over `trials` index sets per `m`.
/// A draw whose restricted population Jacobian loses rank is an error.
pub fn sketch_convergence_study(j_pop: &Matrix, j_t: &Matrix, m_grid: &[usize], trials: usize, rng: &mut Rng) -> Result<SketchStudyReport> {
    let p = j_pop.cols();
    if j_t.cols() != p {
        return Err(shape_err!("J_pop has {p} columns, J_t has {}", j_t.cols()));
    }
    if m_grid.is_empty() || trials == 0 {
        return Err(invalid_arg!("sketch study needs a nonempty grid and at least one trial"));
    }
    if m_grid.windows(2).any(|w| w[0] >= w[1]) || m_grid.iter().any(|&m| m == 0 || m > p) {
        return Err(invalid_arg!("m grid must ascend within 1..={p}: {m_grid:?}"));
    }
    let a = j_pop.transpose();
    let b = j_t.transpose();
    let full = pinv_trace(&a, &b)?;
    if full.rank == 0 || !(full.trace > 0.0) {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    let r = full.rank;
    let leverage = (0..p).map(|i| full.u.row(i)[..r].iter().map(|v| v * v).sum::<f64>());
    let coherence = leverage.fold(0.0, f64::max);
    let condition_number = full.singular[0] / full.singular[r - 1];
    let b_sq = b.frobenius_norm() * b.frobenius_norm();
    let in_span: f64 = (0..r)
        .map(|k| {
            let col = full.u.column(k);
            (0..b.cols())
                .map(|c| {
                    let v = dot(&col, &b.column(c));
                    v * v
                })
                .sum::<f64>()
        })
        .sum();
    let outside = b_sq - in_span;
    let alignment = if outside > 1e-14 * b_sq { Some(in_span / outside) } else { None };

    let relative = |ti: f64| (full.trace - ti).abs() / full.trace;
    let mut trial_errors = Vec::with_capacity(m_grid.len());
    for &m in m_grid {
        let mut errs = Vec::with_capacity(trials);
        for _ in 0..trials {
            let idx = sample_uniform_indices(p, m, rng)?;
            let sub = pinv_trace(&a.select_rows(idx.as_slice()), &b.select_rows(idx.as_slice()))?;
            if sub.rank < r {
                let ratio = sub.singular.get(r - 1).copied().unwrap_or(0.0) / sub.singular[0];
                return Err(Error::RankDeficient { ratio });
            }
            errs.push(relative(sub.trace));
        }
        trial_errors.push(errs);
    }
    let mean_errors: Vec<f64> = trial_errors.iter().map(|e| e.iter().sum::<f64>() / e.len() as f64).collect();
    let partial: Vec<usize> = m_grid.iter().copied().filter(|&m| m < p).collect();
    let partial_err = &mean_errors[..partial.len()];
    let all = sample_uniform_indices(p, p, rng)?;
    let error_at_full = relative(pinv_trace(&a.select_rows(all.as_slice()), &b.select_rows(all.as_slice()))?.trace);
    Ok(SketchStudyReport {
        p,
        m_grid: m_grid.to_vec(),
        slope: log_log_slope(&partial, partial_err),
        monotone: partial_err.windows(2).all(|w| w[1] < w[0]),
        mean_errors,
        trial_errors,
        error_at_full,
        trace_v: full.trace,
        rank: r,
        coherence,
        condition_number,
        low_alignment: alignment.is_some_and(|g| g < MIN_ALIGNMENT),
        alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pinv_quadratic_form_truncated;
    use crate::rng::rng_from_seed;

    fn small_spec() -> SketchInstanceSpec {
        SketchInstanceSpec { p: 128, nd: 32, d: 3, rank: 4, alignment: 10.0, spike: None }
    }

    #[test]
    fn instance_has_requested_structure() {
        let (jp, jt) = synthetic_sketch_instance(&small_spec(), &mut rng_from_seed(1)).unwrap();
        assert_eq!((jp.shape(), jt.shape()), ((32, 128), (3, 128)));
        let r = sketch_convergence_study(&jp, &jt, &[128], 1, &mut rng_from_seed(2)).unwrap();
        assert_eq!(r.rank, 4);
        assert!((r.alignment.unwrap() - 10.0).abs() < 1e-8, "{:?}", r.alignment);
        let (v, _) = pinv_quadratic_form_truncated(&jp.transpose(), &jt.transpose(), SKETCH_RCOND).unwrap();
        assert!((v.trace() - r.trace_v).abs() < 1e-9 * r.trace_v);
    }

    #[test]
    fn full_subnetwork_recovers_the_trace() {
        let (jp, jt) = synthetic_sketch_instance(&small_spec(), &mut rng_from_seed(3)).unwrap();
        let r = sketch_convergence_study(&jp, &jt, &[16, 64, 128], 5, &mut rng_from_seed(4)).unwrap();
        assert!(r.error_at_full < 1e-10);
        assert!(r.trial_errors[2].iter().all(|e| *e < 1e-10));
        assert!(r.slope.is_some());
        assert!(r.mean_errors[0] > r.mean_errors[1]);
    }

    #[test]
    fn coherent_instance_is_harder() {
        let spec = small_spec();
        let coherent = SketchInstanceSpec { spike: Some(1e3), ..spec };
        let (jp, jt) = synthetic_sketch_instance(&spec, &mut rng_from_seed(5)).unwrap();
        let (cp, ct) = synthetic_sketch_instance(&coherent, &mut rng_from_seed(5)).unwrap();
        let inc = sketch_convergence_study(&jp, &jt, &[32], 40, &mut rng_from_seed(6)).unwrap();
        let coh = sketch_convergence_study(&cp, &ct, &[32], 40, &mut rng_from_seed(6)).unwrap();
        assert!(coh.coherence > 0.9, "{}", coh.coherence);
        assert!(inc.coherence < 0.3, "{}", inc.coherence);
        assert!(coh.mean_errors[0] > 1.3 * inc.mean_errors[0], "{} vs {}", coh.mean_errors[0], inc.mean_errors[0]);
    }

    #[test]
    fn slope_fit_oracle() {
        let m = [10, 100, 1000];
        let e: Vec<f64> = m.iter().map(|&m| 3.0 / sqrt(m as f64)).collect();
        assert!((log_log_slope(&m, &e).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(log_log_slope(&[4], &[1.0]), None);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let (jp, jt) = synthetic_sketch_instance(&small_spec(), &mut rng_from_seed(7)).unwrap();
        assert!(sketch_convergence_study(&jp, &jt, &[64, 32], 1, &mut rng_from_seed(8)).is_err());
        assert!(sketch_convergence_study(&jp, &jt, &[256], 1, &mut rng_from_seed(8)).is_err());
        assert!(sketch_convergence_study(&jp, &jt.transpose(), &[32], 1, &mut rng_from_seed(8)).is_err());
    }
}
