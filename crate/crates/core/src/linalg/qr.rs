use alloc::vec;
use alloc::vec::Vec;

use super::matrix::Matrix;
use crate::error::{shape_err, Result};
use crate::math::sqrt;

/// Householder thin QR of a tall matrix `A = Q R` (`Q`: p×k, `R`: k×k).
#[derive(Debug, Clone)]
pub struct ThinQr {
    q: Matrix,
    r: Matrix,
}

impl ThinQr {
    pub fn factor(a: &Matrix) -> Result<Self> {
        let (p, k) = a.shape();
        if p < k {
            return Err(shape_err!("thin QR needs rows >= cols, got {p}x{k}"));
        }
        // Column-major working copy: column j is row j of `w`.
        let mut w = a.transpose();
        let mut vs: Vec<Vec<f64>> = Vec::with_capacity(k);
        for j in 0..k {
            let col = &w.row(j)[j..];
            let norm = sqrt(col.iter().map(|v| v * v).sum());
            let mut v = col.to_vec();
            if norm == 0.0 {
                vs.push(v);
                continue;
            }
            let alpha = if v[0] >= 0.0 { -norm } else { norm };
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 > 0.0 {
                for c in j..k {
                    let colc = &mut w.row_mut(c)[j..];
                    let s: f64 = v.iter().zip(colc.iter()).map(|(a, b)| a * b).sum();
                    let f = 2.0 * s / vnorm2;
                    for (x, vi) in colc.iter_mut().zip(&v) {
                        *x -= f * vi;
                    }
                }
            }
            vs.push(v);
        }
        let r = Matrix::from_fn(k, k, |i, j| if i <= j { w[(j, i)] } else { 0.0 });
        // Accumulate Q = H_0 ⋯ H_{k-1} [I_k; 0], stored column-major.
        let mut qt = Matrix::zeros(k, p);
        for c in 0..k {
            qt[(c, c)] = 1.0;
        }
        for j in (0..k).rev() {
            let v = &vs[j];
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            for c in 0..k {
                let colc = &mut qt.row_mut(c)[j..];
                let s: f64 = v.iter().zip(colc.iter()).map(|(a, b)| a * b).sum();
                let f = 2.0 * s / vnorm2;
                for (x, vi) in colc.iter_mut().zip(v) {
                    *x -= f * vi;
                }
            }
        }
        Ok(Self { q: qt.transpose(), r })
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    /// Squared row norms of `Q`.
    pub fn leverage_scores(&self) -> Vec<f64> {
        (0..self.q.rows()).map(|i| self.q.row(i).iter().map(|v| v * v).sum()).collect()
    }

    /// Least-squares solution `argmin ‖A X − B‖_F = R⁻¹ Qᵀ B` for full-rank `A`.
    pub fn solve_least_squares(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows() != self.q.rows() {
            return Err(shape_err!("least squares rhs has {} rows, expected {}", b.rows(), self.q.rows()));
        }
        let qtb = self.q.matmul_tn(b)?;
        let k = self.r.rows();
        let mut x = Matrix::zeros(k, b.cols());
        let mut col = vec![0.0; k];
        for c in 0..b.cols() {
            for i in (0..k).rev() {
                let mut s = qtb[(i, c)];
                for j in (i + 1)..k {
                    s -= self.r[(i, j)] * col[j];
                }
                col[i] = s / self.r[(i, i)];
            }
            for i in 0..k {
                x[(i, c)] = col[i];
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstructs_and_is_orthonormal() {
        let a = Matrix::from_fn(7, 3, |i, j| ((i * 5 + j * 3) % 7) as f64 - 2.5 + if i == j { 3.0 } else { 0.0 });
        let qr = ThinQr::factor(&a).unwrap();
        let back = qr.q().matmul(qr.r()).unwrap();
        assert!(back.sub(&a).unwrap().max_abs() < 1e-12);
        let qtq = qr.q().gram();
        assert!(qtq.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-12);
        let lev: f64 = qr.leverage_scores().iter().sum();
        assert!((lev - 3.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_recovers_exact_solution() {
        let a = Matrix::from_fn(6, 2, |i, j| (i as f64 + 1.0).powi(j as i32));
        let x = Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]).unwrap();
        let b = a.matmul(&x).unwrap();
        let xs = ThinQr::factor(&a).unwrap().solve_least_squares(&b).unwrap();
        assert!(xs.sub(&x).unwrap().max_abs() < 1e-12);
    }
}
