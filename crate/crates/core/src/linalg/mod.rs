//! Dense `f64` kernels: matrices, SPD solvers, factorizations, and the
//! subsampling and conditioning diagnostics used by the curvature code.

mod cg;
mod cholesky;
mod matrix;
mod qr;
mod sketch;
mod svd;

pub use cg::{cg_solve, CgOptions, CgSolution, LinearOperator};
pub use cholesky::{cholesky_solve, Cholesky};
pub use matrix::{dot, norm2, Matrix};
pub use qr::ThinQr;
pub use sketch::{
    coherence, condition_number, pinv_quadratic_form, pinv_quadratic_form_svd,
    pinv_quadratic_form_truncated, sample_uniform_indices, IndexSet,
};
pub use svd::{symmetric_eigen, thin_svd, SymmetricEigen, ThinSvd};
