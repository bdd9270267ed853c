use alloc::vec::Vec;

use super::matrix::{dot, Matrix};
use crate::error::{shape_err, Error, Result};
use crate::math::sqrt;

/// Symmetry tolerance accepted by the factorization, relative to the largest
/// entry.
const SYMMETRY_TOL: f64 = 1e-10;

/// Lower-triangular factor `L` with `M = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(shape_err!("cholesky of non-square {:?}", m.shape()));
        }
        let scale = m.max_abs().max(1.0);
        if m.max_asymmetry() > SYMMETRY_TOL * scale {
            return Err(Error::InvalidArgument(alloc::format!(
                "matrix is not symmetric (asymmetry {:e})",
                m.max_asymmetry()
            )));
        }
        let n = m.rows();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                // Row-major L keeps both dot operands contiguous.
                let s = {
                    let li = &l.row(i)[..j];
                    let lj = &l.row(j)[..j];
                    m[(i, j)] - dot(li, lj)
                };
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    l[(i, i)] = sqrt(s);
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    /// Solve `L y = b` in place.
    pub fn forward_substitute(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let row = self.l.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// Solve `Lᵀ x = y` in place.
    pub fn backward_substitute(&self, y: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let xi = y[i] / self.l[(i, i)];
            y[i] = xi;
            // Column i of Lᵀ is row i of L.
            let row = self.l.row(i);
            for k in 0..i {
                y[k] -= row[k] * xi;
            }
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(shape_err!("rhs of length {} for dimension {}", b.len(), self.dim()));
        }
        let mut x = b.to_vec();
        self.forward_substitute(&mut x);
        self.backward_substitute(&mut x);
        Ok(x)
    }

    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        if rhs.rows() != self.dim() {
            return Err(shape_err!("rhs with {} rows for dimension {}", rhs.rows(), self.dim()));
        }
        // Work on columns as contiguous rows of the transpose.
        let mut t = rhs.transpose();
        for c in 0..t.rows() {
            let col = t.row_mut(c);
            self.forward_substitute(col);
            self.backward_substitute(col);
        }
        Ok(t.transpose())
    }

    /// `L⁻¹`, lower triangular.
    pub fn lower_inverse(&self) -> Matrix {
        let n = self.dim();
        // Rows of (L⁻¹)ᵀ are forward solves against unit vectors.
        let mut inv_t = Matrix::zeros(n, n);
        let mut e = alloc::vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            // Entries above c stay zero; start the substitution at c.
            for i in c..n {
                let row = self.l.row(i);
                let s = e[i] - dot(&row[c..i], &e[c..i]);
                e[i] = s / row[i];
            }
            inv_t.row_mut(c).copy_from_slice(&e);
        }
        inv_t.transpose()
    }

    /// `M⁻¹ = L⁻ᵀ L⁻¹`, symmetrized.
    pub fn inverse(&self) -> Matrix {
        let w = self.lower_inverse();
        let mut inv = w.matmul_tn(&w).expect("square factors");
        inv.symmetrize();
        inv
    }

    pub fn log_det(&self) -> f64 {
        self.l.diag().iter().map(|&d| 2.0 * crate::math::log(d)).sum()
    }
}

/// Solve `M X = rhs` for symmetric positive definite `M`.
pub fn cholesky_solve(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    Cholesky::factor(m)?.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn random_spd(n: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        let a = Matrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let mut m = a.gram();
        m.add_diagonal(n as f64 * 0.1);
        m
    }

    #[test]
    fn identity_and_scalar() {
        let i2 = Matrix::identity(2);
        assert_eq!(cholesky_solve(&i2, &i2).unwrap(), i2);
        let m = Matrix::from_diag(&[4.0]);
        let x = cholesky_solve(&m, &Matrix::column_vector(&[8.0])).unwrap();
        assert_eq!(x.as_slice(), &[2.0]);
    }

    #[test]
    fn random_spd_residual() {
        let m = random_spd(6, 11);
        let rhs = Matrix::from_fn(6, 3, |i, j| (i as f64) - 0.5 * j as f64);
        let x = cholesky_solve(&m, &rhs).unwrap();
        let r = m.matmul(&x).unwrap().sub(&rhs).unwrap();
        assert!(r.frobenius_norm() / rhs.frobenius_norm() < 1e-10);
    }

    #[test]
    fn inverse_is_inverse() {
        let m = random_spd(9, 3);
        let inv = Cholesky::factor(&m).unwrap().inverse();
        let r = m.matmul(&inv).unwrap().sub(&Matrix::identity(9)).unwrap();
        assert!(r.max_abs() < 1e-10);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::factor(&m), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
        let a = Matrix::from_rows(&[&[1.0, 0.5], &[0.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::factor(&a), Err(Error::InvalidArgument(_))));
    }
}
