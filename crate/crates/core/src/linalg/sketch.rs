use alloc::vec::Vec;

use super::matrix::Matrix;
use super::qr::ThinQr;
use super::svd::{symmetric_eigen, thin_svd};
use crate::error::{invalid_arg, shape_err, Error, Result};

/// Rank cutoff for the least-squares route.
pub const PINV_RANK_TOL: f64 = 1e-12;
/// Rank cutoff for the condition number.
pub const CONDITION_RANK_TOL: f64 = 1e-14;

/// Sorted, distinct positions into a parameter vector of length `universe`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IndexSet {
    indices: Vec<usize>,
    universe: usize,
}

impl IndexSet {
    pub fn new(indices: Vec<usize>, universe: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid_arg!("index set must be nonempty"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid_arg!("indices must be strictly increasing"));
        }
        if let Some(&last) = indices.last() {
            if last >= universe {
                return Err(invalid_arg!("index {last} out of range for {universe} parameters"));
            }
        }
        Ok(Self { indices, universe })
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(mut indices: Vec<usize>, universe: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, universe)
    }

    pub fn full(universe: usize) -> Result<Self> {
        Self::new((0..universe).collect(), universe)
    }

    pub fn range(start: usize, len: usize, universe: usize) -> Result<Self> {
        Self::new((start..start + len).collect(), universe)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.universe
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn union(&self, other: &IndexSet) -> Result<IndexSet> {
        if self.universe != other.universe {
            return Err(invalid_arg!("index sets over {} and {} parameters", self.universe, other.universe));
        }
        let mut all = self.indices.clone();
        all.extend_from_slice(&other.indices);
        Self::from_unsorted(all, self.universe)
    }

    pub fn is_disjoint(&self, other: &IndexSet) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => return false,
            }
        }
        true
    }
}

/// Uniform `m`-subset of `{0, …, p−1}` without replacement, returned sorted.
pub fn sample_uniform_indices<R: rand::Rng + ?Sized>(p: usize, m: usize, rng: &mut R) -> Result<IndexSet> {
    if m == 0 || m > p {
        return Err(invalid_arg!("cannot draw {m} indices from {p}"));
    }
    let picked = if m == p {
        (0..p).collect()
    } else {
        rand::seq::index::sample(rng, p, m).into_vec()
    };
    IndexSet::from_unsorted(picked, p)
}

fn singular_ratio(s: &[f64]) -> f64 {
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
        _ => 0.0,
    }
}

/// `μ(A)`: the largest leverage score of a tall full-rank `A`.
///
/// Uses the thin-QR `Q`, which spans the same column space as the SVD `U`.
pub fn coherence(a: &Matrix) -> Result<f64> {
    let (p, k) = a.shape();
    if p < k || k == 0 {
        return Err(shape_err!("coherence needs a tall matrix, got {p}x{k}"));
    }
    let qr = ThinQr::factor(a)?;
    let ratio = singular_ratio(&thin_svd(qr.r())?.s);
    if ratio < PINV_RANK_TOL {
        return Err(Error::RankDeficient { ratio });
    }
    Ok(qr.leverage_scores().into_iter().fold(0.0, f64::max))
}

/// `κ(A) = σ₁/σ_k`.
pub fn condition_number(a: &Matrix) -> Result<f64> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(shape_err!("condition number of empty matrix"));
    }
    let s = thin_svd(a)?.s;
    let ratio = singular_ratio(&s);
    if ratio < CONDITION_RANK_TOL {
        return Err(Error::RankDeficient { ratio });
    }
    Ok(1.0 / ratio)
}

/// `Bᵀ(AAᵀ)⁺B` by the least-squares route: `X = A⁺B`, return `XᵀX`.
pub fn pinv_quadratic_form(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let (p, k) = a.shape();
    if b.rows() != p {
        return Err(shape_err!("A has {p} rows but B has {}", b.rows()));
    }
    if p < k {
        return Err(shape_err!("least-squares route needs a tall A, got {p}x{k}"));
    }
    let qr = ThinQr::factor(a)?;
    let ratio = singular_ratio(&thin_svd(qr.r())?.s);
    if ratio < PINV_RANK_TOL {
        return Err(Error::RankDeficient { ratio });
    }
    let x = qr.solve_least_squares(b)?;
    let mut out = x.gram();
    out.symmetrize();
    Ok(out)
}

/// `Bᵀ(AAᵀ)⁺B` evaluated literally: eigendecompose `AAᵀ`, invert eigenvalues
/// above `rcond·λ_max`, and sandwich with `B`.
pub fn pinv_quadratic_form_svd(a: &Matrix, b: &Matrix, rcond: f64) -> Result<Matrix> {
    let p = a.rows();
    if b.rows() != p {
        return Err(shape_err!("A has {p} rows but B has {}", b.rows()));
    }
    let g = a.matmul_nt(a)?;
    let eig = symmetric_eigen(&g)?;
    let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let ub = eig.vectors.matmul_tn(b)?;
    let mut y = Matrix::zeros(0, b.cols());
    for (i, &lam) in eig.values.iter().enumerate() {
        if lam > rcond * top && lam > 0.0 {
            let s = 1.0 / crate::math::sqrt(lam);
            let row = Matrix::from_fn(1, b.cols(), |_, c| ub[(i, c)] * s);
            y = y.vstack(&row)?;
        }
    }
    if y.rows() == 0 {
        return Ok(Matrix::zeros(b.cols(), b.cols()));
    }
    let mut out = y.gram();
    out.symmetrize();
    Ok(out)
}

/// `Bᵀ(AAᵀ)⁺B` through a thin SVD of `A` of any shape, dropping singular
/// values below `rcond·σ₁`. Also returns the numerical rank.
pub fn pinv_quadratic_form_truncated(a: &Matrix, b: &Matrix, rcond: f64) -> Result<(Matrix, usize)> {
    let p = a.rows();
    if b.rows() != p {
        return Err(shape_err!("A has {p} rows but B has {}", b.rows()));
    }
    let svd = thin_svd(a)?;
    let top = svd.s.first().copied().unwrap_or(0.0);
    let rank = svd.s.iter().take_while(|&&s| s > rcond * top && s > 0.0).count();
    if rank == 0 {
        return Ok((Matrix::zeros(b.cols(), b.cols()), 0));
    }
    let cols: Vec<usize> = (0..rank).collect();
    let ur = svd.u.select_columns(&cols);
    let mut y = ur.matmul_tn(b)?;
    for i in 0..rank {
        let inv = 1.0 / svd.s[i];
        y.row_mut(i).iter_mut().for_each(|v| *v *= inv);
    }
    let mut out = y.gram();
    out.symmetrize();
    Ok((out, rank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random(p: usize, k: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        Matrix::from_fn(p, k, |_, _| StandardNormal.sample(&mut rng))
    }

    fn svd_coherence(a: &Matrix) -> f64 {
        let u = thin_svd(a).unwrap().u;
        (0..u.rows()).map(|i| u.row(i).iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max)
    }

    #[test]
    fn index_set_validation() {
        assert!(IndexSet::new(alloc::vec![], 3).is_err());
        assert!(IndexSet::new(alloc::vec![1, 1], 3).is_err());
        assert!(IndexSet::new(alloc::vec![2, 1], 3).is_err());
        assert!(IndexSet::new(alloc::vec![3], 3).is_err());
        let a = IndexSet::new(alloc::vec![0, 2], 4).unwrap();
        let b = IndexSet::new(alloc::vec![1, 3], 4).unwrap();
        assert!(a.is_disjoint(&b));
        assert!(a.union(&b).unwrap().is_full());
    }

    #[test]
    fn sampling_edge_cases_and_frequencies() {
        let mut rng = rng_from_seed(1);
        assert_eq!(sample_uniform_indices(5, 5, &mut rng).unwrap().as_slice(), &[0, 1, 2, 3, 4]);
        assert_eq!(sample_uniform_indices(1, 1, &mut rng).unwrap().as_slice(), &[0]);
        assert!(matches!(sample_uniform_indices(3, 4, &mut rng), Err(Error::InvalidArgument(_))));
        let mut counts = [0usize; 100];
        let reps = 10_000;
        for _ in 0..reps {
            for &i in sample_uniform_indices(100, 10, &mut rng).unwrap().as_slice() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / reps as f64;
            assert!((f - 0.10).abs() < 0.01, "frequency {f}");
        }
        let s1 = sample_uniform_indices(50, 7, &mut rng_from_seed(9)).unwrap();
        let s2 = sample_uniform_indices(50, 7, &mut rng_from_seed(9)).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn coherence_examples() {
        let a = Matrix::from_fn(6, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        assert!((coherence(&a).unwrap() - 1.0).abs() < 1e-14);
        let ones = Matrix::from_fn(4, 1, |_, _| 1.0);
        assert!((coherence(&ones).unwrap() - 0.25).abs() < 1e-14);
        let r = random(20, 4, 3);
        assert!((coherence(&r).unwrap() - svd_coherence(&r)).abs() < 1e-10);
        let def = Matrix::from_fn(5, 2, |i, _| i as f64);
        assert!(matches!(coherence(&def), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn condition_examples() {
        assert!((condition_number(&Matrix::identity(3)).unwrap() - 1.0).abs() < 1e-14);
        assert!((condition_number(&Matrix::from_diag(&[3.0, 1.0])).unwrap() - 3.0).abs() < 1e-14);
        let a = random(12, 5, 4);
        let na = nalgebra::DMatrix::from_row_slice(12, 5, a.as_slice());
        let ev = (na.transpose() * &na).symmetric_eigen().eigenvalues;
        let (lo, hi) = ev.iter().fold((f64::MAX, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        let expected = (hi / lo).sqrt();
        assert!((condition_number(&a).unwrap() - expected).abs() < 1e-8 * expected);
    }

    #[test]
    fn pinv_examples() {
        let b = random(5, 2, 6);
        let q = pinv_quadratic_form(&Matrix::identity(5), &b).unwrap();
        assert!(q.sub(&b.gram()).unwrap().max_abs() < 1e-12);
        let z = pinv_quadratic_form(&random(5, 2, 7), &Matrix::zeros(5, 3)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let a = random(10, 3, 8);
        let b = random(10, 2, 9);
        let ls = pinv_quadratic_form(&a, &b).unwrap();
        let sv = pinv_quadratic_form_svd(&a, &b, 1e-12).unwrap();
        assert!(ls.sub(&sv).unwrap().frobenius_norm() < 1e-8 * sv.frobenius_norm());
        let (tr, rank) = pinv_quadratic_form_truncated(&a, &b, 1e-12).unwrap();
        assert_eq!(rank, 3);
        assert!(ls.sub(&tr).unwrap().frobenius_norm() < 1e-10 * tr.frobenius_norm());
        let def = Matrix::from_fn(6, 2, |i, _| i as f64);
        assert!(matches!(pinv_quadratic_form(&def, &b.select_rows(&[0, 1, 2, 3, 4, 5])), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn truncated_handles_wide_and_low_rank() {
        let a = random(4, 9, 10);
        let b = random(4, 2, 11);
        let (q, rank) = pinv_quadratic_form_truncated(&a, &b, 1e-12).unwrap();
        assert_eq!(rank, 4);
        let sv = pinv_quadratic_form_svd(&a, &b, 1e-12).unwrap();
        assert!(q.sub(&sv).unwrap().max_abs() < 1e-9 * sv.max_abs());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pinv_is_symmetric_psd(seed in 0u64..10_000, p in 4usize..16, k in 1usize..4, l in 1usize..4) {
            let a = random(p, k, seed);
            let b = random(p, l, seed + 1);
            let q = pinv_quadratic_form(&a, &b).unwrap();
            prop_assert!(q.max_asymmetry() < 1e-12);
            let e = symmetric_eigen(&q).unwrap();
            prop_assert!(*e.values.last().unwrap() >= -1e-10);
        }

        #[test]
        fn coherence_is_invariant_to_right_mixing(seed in 0u64..10_000, p in 6usize..20, k in 1usize..5) {
            let a = random(p, k, seed);
            let mut mix = random(k, k, seed + 7);
            mix.add_diagonal(3.0);
            let am = a.matmul(&mix).unwrap();
            prop_assert!((coherence(&a).unwrap() - coherence(&am).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn condition_is_scale_invariant(seed in 0u64..10_000, c in prop_oneof![-100.0..-0.01f64, 0.01..100.0f64]) {
            let a = random(8, 3, seed);
            let k1 = condition_number(&a).unwrap();
            let k2 = condition_number(&a.scale(c)).unwrap();
            prop_assert!((k1 - k2).abs() < 1e-10 * k1);
        }
    }
}
