//! Gauss–Newton curvature over a parameter subset and the damped posterior
//! covariance `Σ = (H + λI)⁻¹`.
//!
//! `H = (1/n)·Σ_i J_iᵀ J_i` with `J_i = ∂ε_θ(x_i, t_i)/∂θ_I`. The `2/d`
//! factor of the training loss is folded into the effective scale of `λ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::denoiser::DenoiserModel;
use crate::diffusion::DiffusionSchedule;
use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::linalg::{cg_solve, dot, norm2, symmetric_eigen, CgOptions, CgSolution, Cholesky, IndexSet, LinearOperator, Matrix};
use crate::math::sqrt;
use crate::rng::Rng;
use crate::training::{draw_batch, TimestepSampler};

/// Largest `m` factored densely; above it solves go through CG.
pub const DENSE_LIMIT: usize = 4096;
/// Largest GGN side we agree to allocate (`m²` doubles, 2 GiB).
pub const GGN_MAX_DIM: usize = 16_384;
pub const DEFAULT_LAMBDA: f64 = 1e-6;
pub const DEFAULT_GGN_PAIRS: usize = 512;
/// Pairs pushed through one batched backward pass during assembly.
const PAIR_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct GgnMatrix {
    pub index_set: IndexSet,
    pub h: Matrix,
    pub n_train: usize,
}

impl GgnMatrix {
    /// `(1/n)·JᵀJ` for a stacked Jacobian with `n` pairs.
    pub fn from_stacked(index_set: IndexSet, j_pop: &Matrix, n_pairs: usize) -> Result<Self> {
        if j_pop.cols() != index_set.len() {
            return Err(shape_err!("stacked Jacobian has {} columns for {} indices", j_pop.cols(), index_set.len()));
        }
        if n_pairs == 0 {
            return Err(invalid_arg!("GGN needs at least one pair"));
        }
        let mut h = j_pop.gram();
        h.scale_mut(1.0 / n_pairs as f64);
        h.symmetrize();
        Ok(Self { index_set, h, n_train: n_pairs })
    }

    pub fn dim(&self) -> usize {
        self.index_set.len()
    }
}

/// Draws `n_pairs` training points, noises them at uniform steps and
/// averages `JᵀJ` over the selected columns.
pub fn assemble_ggn(
    model: &DenoiserModel,
    data: &Matrix,
    schedule: &DiffusionSchedule,
    index_set: &IndexSet,
    n_pairs: usize,
    rng: &mut Rng,
) -> Result<GgnMatrix> {
    let m = index_set.len();
    if m > GGN_MAX_DIM {
        return Err(Error::ResourceLimit { what: "GGN dimension m", requested: m, limit: GGN_MAX_DIM });
    }
    if n_pairs == 0 {
        return Err(invalid_arg!("GGN needs at least one pair"));
    }
    if data.rows() == 0 {
        return Err(invalid_arg!("empty training set"));
    }
    let map = model.column_map(index_set)?;
    let sampler = TimestepSampler::new(schedule, false)?;
    let batch = draw_batch(data, n_pairs, &sampler, rng);
    let xt = crate::denoiser::noised_inputs(&batch, schedule)?;
    let mut h = Matrix::zeros(m, m);
    let mut start = 0;
    while start < n_pairs {
        let end = (start + PAIR_CHUNK).min(n_pairs);
        let rows: Vec<usize> = (start..end).collect();
        let (_, j) = model.jacobian_columns_batch(&xt.select_rows(&rows), &batch.t[start..end], &map)?;
        Matrix::gemm_into(&mut h, 1.0, &j, true, &j, false, 1.0)?;
        start = end;
    }
    h.scale_mut(1.0 / n_pairs as f64);
    h.symmetrize();
    Ok(GgnMatrix { index_set: index_set.clone(), h, n_train: n_pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PosteriorKind {
    FullDense,
    Subnet,
    LastLayer,
}

/// Covariance of a Gaussian posterior over the parameters in
/// [`index_set`](Posterior::index_set).
pub trait Posterior {
    fn index_set(&self) -> &IndexSet;

    fn dim(&self) -> usize {
        self.index_set().len()
    }

    /// `Σ v`
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// `Σ B` column by column.
    fn apply_matrix(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows() != self.dim() {
            return Err(shape_err!("{} rows for a {}-dim posterior", b.rows(), self.dim()));
        }
        let bt = b.transpose();
        let mut out = Matrix::zeros(bt.rows(), bt.cols());
        for c in 0..bt.rows() {
            out.row_mut(c).copy_from_slice(&self.apply(bt.row(c))?);
        }
        Ok(out.transpose())
    }

    /// `J Σ Jᵀ` for `J` with one column per posterior coordinate.
    fn quadratic_form(&self, j: &Matrix) -> Result<Matrix> {
        if j.cols() != self.dim() {
            return Err(shape_err!("Jacobian with {} columns for a {}-dim posterior", j.cols(), self.dim()));
        }
        let s = self.apply_matrix(&j.transpose())?;
        let mut q = j.matmul(&s)?;
        q.symmetrize();
        Ok(q)
    }

    /// `J_s Σ J_sᵀ` for each consecutive block of `block` rows of `j`.
    fn quadratic_forms(&self, j: &Matrix, block: usize) -> Result<Vec<Matrix>> {
        blocks_of(j, block)?.map(|rows| self.quadratic_form(&j.select_rows(&rows))).collect()
    }

    /// Explicit `Σ`.
    fn dense(&self) -> Result<Matrix>;

    /// Maps a standard-normal vector `ξ` to a draw from `N(0, Σ)`.
    fn draw(&self, xi: &[f64]) -> Result<Vec<f64>>;
}

fn blocks_of(j: &Matrix, block: usize) -> Result<impl Iterator<Item = Vec<usize>>> {
    if block == 0 || !j.rows().is_multiple_of(block) {
        return Err(shape_err!("{} rows do not split into blocks of {}", j.rows(), block));
    }
    Ok((0..j.rows() / block).map(move |s| (s * block..(s + 1) * block).collect()))
}

#[derive(Debug, Clone)]
enum Solver {
    /// Factor of `H + λI` and its lower-triangular inverse.
    Dense(Cholesky, Matrix),
    Cg { options: CgOptions },
}

#[derive(Debug, Clone)]
pub struct PosteriorOperator {
    kind: PosteriorKind,
    ggn: GgnMatrix,
    lambda: f64,
    solver: Solver,
}

struct Damped<'a> {
    h: &'a Matrix,
    lambda: f64,
}

impl LinearOperator for Damped<'_> {
    fn dim(&self) -> usize {
        self.h.rows()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.h.row(i), x) + self.lambda * x[i];
        }
    }
}

impl PosteriorOperator {
    pub fn new(kind: PosteriorKind, ggn: GgnMatrix, lambda: f64) -> Result<Self> {
        Self::with_dense_limit(kind, ggn, lambda, DENSE_LIMIT)
    }

    /// As [`new`](Self::new) with a custom Cholesky/CG switch point.
    pub fn with_dense_limit(kind: PosteriorKind, ggn: GgnMatrix, lambda: f64, dense_limit: usize) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid_arg!("damping must be positive, got {lambda}"));
        }
        if ggn.h.shape() != (ggn.dim(), ggn.dim()) {
            return Err(shape_err!("GGN {:?} for {} indices", ggn.h.shape(), ggn.dim()));
        }
        let solver = if ggn.dim() <= dense_limit {
            let mut a = ggn.h.clone();
            a.add_diagonal(lambda);
            let chol = Cholesky::factor(&a)?;
            let l_inv = chol.lower_inverse();
            Solver::Dense(chol, l_inv)
        } else {
            Solver::Cg { options: CgOptions { tol: 1e-10, max_iter: None } }
        };
        Ok(Self { kind, ggn, lambda, solver })
    }

    pub fn kind(&self) -> PosteriorKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn ggn(&self) -> &GgnMatrix {
        &self.ggn
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.solver, Solver::Dense(..))
    }

    /// `(H + λI) v`
    pub fn apply_precision(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.ggn.dim() {
            return Err(shape_err!("vector of length {} for a {}-dim posterior", v.len(), self.ggn.dim()));
        }
        Ok(Damped { h: &self.ggn.h, lambda: self.lambda }.apply(v))
    }

    /// CG on `(H+λI) z = g`, regardless of the cached factor.
    pub fn cg(&self, g: &[f64], options: CgOptions) -> Result<CgSolution> {
        if g.len() != self.ggn.dim() {
            return Err(shape_err!("vector of length {} for a {}-dim posterior", g.len(), self.ggn.dim()));
        }
        cg_solve(&Damped { h: &self.ggn.h, lambda: self.lambda }, g, options)
    }

    /// As [`cg`](Self::cg), failing when CG does not reach the tolerance.
    pub fn cg_apply(&self, g: &[f64], options: CgOptions) -> Result<Vec<f64>> {
        let sol = self.cg(g, options)?;
        if !sol.converged {
            return Err(Error::NumericalBreakdown(alloc::format!(
                "CG stalled at relative residual {:e} after {} iterations",
                sol.relative_residual, sol.iterations
            )));
        }
        Ok(sol.x)
    }

    pub fn summary(&self) -> PosteriorSummary {
        let (eig_max, eig_min) = extreme_eigenvalues(&self.ggn.h, 300);
        PosteriorSummary {
            kind: self.kind,
            m: self.ggn.dim(),
            lambda: self.lambda,
            trace_h: self.ggn.h.trace(),
            eig_max,
            eig_min,
        }
    }
}

impl Posterior for PosteriorOperator {
    fn index_set(&self) -> &IndexSet {
        &self.ggn.index_set
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.solver {
            Solver::Dense(c, _) => c.solve_vec(v),
            Solver::Cg { options } => self.cg_apply(v, *options),
        }
    }

    fn quadratic_form(&self, j: &Matrix) -> Result<Matrix> {
        Ok(self.quadratic_forms(j, j.rows().max(1))?.pop().unwrap_or_else(|| Matrix::zeros(0, 0)))
    }

    /// `J Σ Jᵀ = (J L⁻ᵀ)(J L⁻ᵀ)ᵀ` with one product for all blocks on the
    /// dense route.
    fn quadratic_forms(&self, j: &Matrix, block: usize) -> Result<Vec<Matrix>> {
        if j.cols() != self.dim() {
            return Err(shape_err!("Jacobian with {} columns for a {}-dim posterior", j.cols(), self.dim()));
        }
        let blocks = blocks_of(j, block)?;
        let Solver::Dense(_, l_inv) = &self.solver else {
            return blocks
                .map(|rows| {
                    let jb = j.select_rows(&rows);
                    let s = self.apply_matrix(&jb.transpose())?;
                    let mut q = jb.matmul(&s)?;
                    q.symmetrize();
                    Ok(q)
                })
                .collect();
        };
        let mut w = Matrix::zeros(j.rows(), j.cols());
        Matrix::gemm_into(&mut w, 1.0, j, false, l_inv, true, 0.0)?;
        blocks
            .map(|rows| {
                let wb = w.select_rows(&rows);
                let mut q = wb.matmul_nt(&wb)?;
                q.symmetrize();
                Ok(q)
            })
            .collect()
    }

    fn dense(&self) -> Result<Matrix> {
        let m = self.dim();
        if m > DENSE_LIMIT {
            return Err(Error::ResourceLimit { what: "dense posterior dimension m", requested: m, limit: DENSE_LIMIT });
        }
        match &self.solver {
            Solver::Dense(_, l_inv) => {
                let mut inv = l_inv.matmul_tn(l_inv)?;
                inv.symmetrize();
                Ok(inv)
            }
            Solver::Cg { .. } => {
                let mut a = self.ggn.h.clone();
                a.add_diagonal(self.lambda);
                Ok(Cholesky::factor(&a)?.inverse())
            }
        }
    }

    /// `L⁻ᵀ ξ`, whose covariance is `(L Lᵀ)⁻¹ = Σ`.
    fn draw(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.dim() {
            return Err(shape_err!("draw of length {} for a {}-dim posterior", xi.len(), self.dim()));
        }
        let Solver::Dense(c, _) = &self.solver else {
            return Err(Error::ResourceLimit { what: "posterior dimension for sampling", requested: self.dim(), limit: DENSE_LIMIT });
        };
        let mut x = xi.to_vec();
        c.backward_substitute(&mut x);
        Ok(x)
    }
}

/// `Σ = 0`: a posterior concentrated at the point estimate.
#[derive(Debug, Clone)]
pub struct ZeroPosterior {
    index_set: IndexSet,
}

impl ZeroPosterior {
    pub fn new(index_set: IndexSet) -> Self {
        Self { index_set }
    }
}

impl Posterior for ZeroPosterior {
    fn index_set(&self) -> &IndexSet {
        &self.index_set
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(shape_err!("vector of length {} for a {}-dim posterior", v.len(), self.dim()));
        }
        Ok(vec![0.0; v.len()])
    }

    fn dense(&self) -> Result<Matrix> {
        Ok(Matrix::zeros(self.dim(), self.dim()))
    }

    fn draw(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.dim() {
            return Err(shape_err!("draw of length {} for a {}-dim posterior", xi.len(), self.dim()));
        }
        Ok(vec![0.0; xi.len()])
    }
}

/// An explicitly given covariance, used for scaled and hand-built posteriors.
#[derive(Debug, Clone)]
pub struct DenseCovariance {
    index_set: IndexSet,
    sigma: Matrix,
    /// Symmetric square root, eigenvalues clipped at zero.
    root: Matrix,
}

impl DenseCovariance {
    pub fn new(index_set: IndexSet, sigma: Matrix) -> Result<Self> {
        if sigma.shape() != (index_set.len(), index_set.len()) {
            return Err(shape_err!("covariance {:?} for {} indices", sigma.shape(), index_set.len()));
        }
        let eig = symmetric_eigen(&sigma)?;
        let n = sigma.rows();
        let scaled = Matrix::from_fn(n, n, |i, k| eig.vectors[(i, k)] * sqrt(eig.values[k].max(0.0)));
        let root = scaled.matmul_nt(&eig.vectors)?;
        Ok(Self { index_set, sigma, root })
    }

    pub fn from_posterior<P: Posterior + ?Sized>(posterior: &P, scale: f64) -> Result<Self> {
        Self::new(posterior.index_set().clone(), posterior.dense()?.scale(scale))
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }
}

impl Posterior for DenseCovariance {
    fn index_set(&self) -> &IndexSet {
        &self.index_set
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.sigma.matvec(v)
    }

    fn apply_matrix(&self, b: &Matrix) -> Result<Matrix> {
        self.sigma.matmul(b)
    }

    fn dense(&self) -> Result<Matrix> {
        Ok(self.sigma.clone())
    }

    fn draw(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.root.matvec(xi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PosteriorSummary {
    pub kind: PosteriorKind,
    pub m: usize,
    pub lambda: f64,
    pub trace_h: f64,
    /// Power-iteration estimate of the largest GGN eigenvalue.
    pub eig_max: f64,
    /// Power-iteration estimate of the smallest GGN eigenvalue.
    pub eig_min: f64,
}

/// Power iteration on `H` and on `λ_max·I − H`, from a fixed start vector.
pub fn extreme_eigenvalues(h: &Matrix, iterations: usize) -> (f64, f64) {
    let n = h.rows();
    if n == 0 {
        return (0.0, 0.0);
    }
    let power = |shift: f64| -> f64 {
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        let nv = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let mut w = h.apply(&v);
            for (wi, vi) in w.iter_mut().zip(&v) {
                *wi = shift * vi - *wi;
            }
            if shift == 0.0 {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            lambda = dot(&v, &w);
            let nw = norm2(&w);
            if nw == 0.0 {
                break;
            }
            v = w.into_iter().map(|x| x / nw).collect();
        }
        lambda
    };
    let max = power(0.0);
    let min = max - power(max);
    (max, min)
}
