use alloc::vec::Vec;

use super::matrix::{dot, Matrix};
use super::qr::ThinQr;
use crate::error::{Error, Result};
use crate::math::sqrt;

const MAX_SWEEPS: usize = 60;

/// Thin SVD `A = U diag(s) Vᵀ` with singular values in decreasing order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// p×k
    pub u: Matrix,
    pub s: Vec<f64>,
    /// k×k
    pub v: Matrix,
}

/// One-sided Jacobi SVD of a p×k matrix (any shape; works on the tall side).
pub fn thin_svd(a: &Matrix) -> Result<ThinSvd> {
    let (p, k) = a.shape();
    if p < k {
        let t = thin_svd(&a.transpose())?;
        return Ok(ThinSvd { u: t.v, s: t.s, v: t.u });
    }
    if !a.is_finite() {
        return Err(Error::NumericalBreakdown("svd of non-finite matrix".into()));
    }
    if p > k {
        // Jacobi on the small triangular factor, then lift back with Q.
        let qr = ThinQr::factor(a)?;
        let inner = jacobi_svd(qr.r())?;
        let u = qr.q().matmul(&inner.u)?;
        return Ok(ThinSvd { u, s: inner.s, v: inner.v });
    }
    jacobi_svd(a)
}

fn jacobi_svd(a: &Matrix) -> Result<ThinSvd> {
    let (p, k) = a.shape();
    // Columns of A as rows of `w`; columns of V as rows of `vt`.
    let mut w = a.transpose();
    let mut vt = Matrix::identity(k);
    let eps = f64::EPSILON;
    let tiny = eps * a.frobenius_norm();
    let floor = tiny * tiny;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..k {
            for j in (i + 1)..k {
                let alpha = dot(w.row(i), w.row(i));
                let beta = dot(w.row(j), w.row(j));
                let gamma = dot(w.row(i), w.row(j));
                if gamma == 0.0 || gamma.abs() <= eps * sqrt(alpha * beta) || sqrt(alpha * beta) < floor {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + sqrt(1.0 + zeta * zeta));
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / sqrt(1.0 + t * t);
                let s = c * t;
                rotate_rows(&mut w, i, j, c, s);
                rotate_rows(&mut vt, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalBreakdown("jacobi svd did not converge".into()));
    }
    let norms: Vec<f64> = (0..k).map(|i| sqrt(dot(w.row(i), w.row(i)))).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let s: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let mut u = Matrix::zeros(p, k);
    let mut v = Matrix::zeros(k, k);
    for (col, &i) in order.iter().enumerate() {
        let n = norms[i];
        if n > smax * eps * (p as f64) && n > 0.0 {
            for r in 0..p {
                u[(r, col)] = w[(i, r)] / n;
            }
        }
        for r in 0..k {
            v[(r, col)] = vt[(i, r)];
        }
    }
    Ok(ThinSvd { u, s, v })
}

fn rotate_rows(m: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (lo, hi) = data.split_at_mut(j * cols);
    let ri = &mut lo[i * cols..(i + 1) * cols];
    let rj = &mut hi[..cols];
    for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues in decreasing order.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigen-solver for symmetric matrices.
pub fn symmetric_eigen(m: &Matrix) -> Result<SymmetricEigen> {
    if !m.is_square() {
        return Err(Error::Shape(alloc::format!("eigen of non-square {:?}", m.shape())));
    }
    if !m.is_finite() {
        return Err(Error::NumericalBreakdown("eigen of non-finite matrix".into()));
    }
    let n = m.rows();
    let mut a = m.clone();
    a.symmetrize();
    let mut vt = Matrix::identity(n);
    let scale = a.frobenius_norm();
    let mut converged = n < 2 || scale == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let floor = f64::EPSILON * sqrt((a[(p, p)] * a[(q, q)]).abs()).max(scale);
                if apq.abs() <= floor {
                    continue;
                }
                rotated = true;
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta == 0.0 { 1.0 } else { theta.signum() / (theta.abs() + sqrt(1.0 + theta * theta)) };
                let c = 1.0 / sqrt(1.0 + t * t);
                let s = t * c;
                // A ← Jᵀ A J on rows and columns p, q.
                rotate_rows(&mut a, p, q, c, s);
                for r in 0..n {
                    let (x, y) = (a[(r, p)], a[(r, q)]);
                    a[(r, p)] = c * x - s * y;
                    a[(r, q)] = s * x + c * y;
                }
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NumericalBreakdown("jacobi eigen did not converge".into()));
    }
    let diag = a.diag();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| diag[y].total_cmp(&diag[x]));
    let values = order.iter().map(|&i| diag[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| vt[(order[c], r)]);
    Ok(SymmetricEigen { values, vectors })
}
