//! Parameter-space (epistemic) uncertainty for small ε-prediction diffusion
//! denoisers.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation:
//! dense linear algebra, the denoiser network and its parameter Jacobians,
//! noise schedules and reverse samplers, AdamW training, Gauss–Newton
//! curvature, the epistemic covariance recursion (full, last-layer and
//! random-subnetwork estimators), and the evaluation statistics. File formats
//! and the command line live in the `flare-uq` crate.
//!
//! Enable the `std` feature (on by default) for runtime SIMD dispatch in the
//! GEMM kernel.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod datasets;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod laplace;
pub mod linalg;
mod math;
pub mod rng;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};
