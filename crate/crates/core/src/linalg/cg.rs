use alloc::vec;
use alloc::vec::Vec;

use super::matrix::{axpy, dot, norm2, Matrix};
use crate::error::{invalid_arg, shape_err, Error, Result};

/// A symmetric linear map known only through its action on vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `out ← A x`
    fn apply_into(&self, x: &[f64], out: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out);
        out
    }
}

impl LinearOperator for Matrix {
    fn dim(&self) -> usize {
        debug_assert!(self.is_square());
        self.rows()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `‖A z − b‖ ≤ tol·‖b‖`.
    pub tol: f64,
    /// `None` means `10 × dimension`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for SPD `op`. Returns the best iterate with
/// `converged = false` when the iteration budget runs out.
pub fn cg_solve<A: LinearOperator + ?Sized>(op: &A, rhs: &[f64], opts: CgOptions) -> Result<CgSolution> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(shape_err!("cg: rhs of length {} for operator of dimension {}", rhs.len(), n));
    }
    if !(opts.tol > 0.0) {
        return Err(invalid_arg!("cg: tolerance must be positive, got {}", opts.tol));
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let bnorm = norm2(rhs);
    if !bnorm.is_finite() {
        return Err(Error::NumericalBreakdown("cg: non-finite right-hand side".into()));
    }
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(CgSolution { x, iterations: 0, relative_residual: 0.0, converged: true });
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let target = opts.tol * bnorm;
    let mut best_x = x.clone();
    let mut best_res = bnorm;
    let mut iterations = 0;
    while iterations < max_iter {
        op.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || !rr.is_finite() {
            return Err(Error::NumericalBreakdown(alloc::format!("cg: non-finite curvature at iteration {iterations}")));
        }
        if pap <= 0.0 {
            return Err(Error::NumericalBreakdown(alloc::format!(
                "cg: non-positive curvature pᵀAp = {pap:e} at iteration {iterations}"
            )));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        iterations += 1;
        let rr_new = dot(&r, &r);
        let res = crate::math::sqrt(rr_new);
        if res < best_res {
            best_res = res;
            best_x.copy_from_slice(&x);
        }
        if res <= target {
            break;
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    // The recursive residual drifts; report the true one.
    op.apply_into(&best_x, &mut ap);
    let true_res = ap.iter().zip(rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let relative_residual = crate::math::sqrt(true_res) / bnorm;
    if !relative_residual.is_finite() {
        return Err(Error::NumericalBreakdown("cg: non-finite residual".into()));
    }
    Ok(CgSolution {
        x: best_x,
        iterations,
        relative_residual,
        converged: relative_residual <= opts.tol * 1.01 || best_res <= target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky_solve;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identity_and_diagonal() {
        let s = cg_solve(&Matrix::identity(3), &[1.0, 2.0, 3.0], CgOptions::default()).unwrap();
        assert!(s.converged);
        for (a, b) in s.x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let d = Matrix::from_diag(&[2.0, 4.0]);
        let s = cg_solve(&d, &[2.0, 4.0], CgOptions::default()).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_cholesky_on_random_spd() {
        let mut rng = rng_from_seed(5);
        let a = Matrix::from_fn(8, 8, |_, _| StandardNormal.sample(&mut rng));
        let mut m = a.gram();
        m.add_diagonal(0.5);
        let b: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = cg_solve(&m, &b, CgOptions::default()).unwrap();
        let z = cholesky_solve(&m, &Matrix::column_vector(&b)).unwrap();
        let err: f64 = s.x.iter().zip(z.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(s.converged);
        assert!(err < 1e-8 * norm2(z.as_slice()), "err {err}");
    }

    #[test]
    fn budget_exhaustion_reports_unconverged() {
        let m = Matrix::from_diag(&[1.0, 10.0, 100.0, 1000.0]);
        let s = cg_solve(&m, &[1.0; 4], CgOptions { tol: 1e-14, max_iter: Some(1) }).unwrap();
        assert!(!s.converged);
        assert_eq!(s.iterations, 1);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn agrees_with_cholesky(seed in 0u64..100_000, n in 1usize..64) {
            let mut rng = rng_from_seed(seed);
            let a = Matrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
            let mut m = a.gram();
            m.add_diagonal(1e-2 * n as f64);
            let b: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let s = cg_solve(&m, &b, CgOptions { tol: 1e-12, max_iter: None }).unwrap();
            let z = cholesky_solve(&m, &Matrix::column_vector(&b)).unwrap();
            let diff: Vec<f64> = s.x.iter().zip(z.as_slice()).map(|(x, y)| x - y).collect();
            proptest::prop_assert!(norm2(&diff) <= 1e-8 * norm2(z.as_slice()));
        }
    }

    #[test]
    fn errors() {
        let m = Matrix::identity(2);
        assert!(matches!(cg_solve(&m, &[1.0], CgOptions::default()), Err(Error::Shape(_))));
        assert!(matches!(
            cg_solve(&m, &[1.0, f64::NAN], CgOptions::default()),
            Err(Error::NumericalBreakdown(_))
        ));
        let neg = Matrix::from_diag(&[-1.0, -1.0]);
        assert!(matches!(cg_solve(&neg, &[1.0, 1.0], CgOptions::default()), Err(Error::NumericalBreakdown(_))));
    }
}
