use alloc::vec::Vec;

use super::{build_posterior, flare_batch, EstimatorKind, FlareOptions};
use crate::denoiser::DenoiserModel;
use crate::diffusion::{DiffusionSchedule, NoiseRealization, SamplerKind};
use crate::error::{invalid_arg, Result};
use crate::laplace::{DEFAULT_GGN_PAIRS, DEFAULT_LAMBDA};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, rng_from_seed, sub_rng};

/// Stream index reserved for the GGN pair draws.
const PAIR_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub lambda: f64,
    pub n_pairs: usize,
    pub sampler: SamplerKind,
    /// Drives index-set and GGN pair draws.
    pub seed: u64,
    /// Sample `i` uses the realization seeded `derive_seed(noise_seed, i)`.
    pub noise_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA, n_pairs: DEFAULT_GGN_PAIRS, sampler: SamplerKind::Ddpm, seed: 0, noise_seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KeepFractionRow {
    pub fraction: f64,
    pub m: usize,
    /// Mean of `tr(Σ^ep_0)/d` over the samples.
    pub mean_score: f64,
}

/// Mean FLARE score at each keep fraction, `m = ⌈fraction·p⌉`. Every
/// fraction sees the same GGN pairs and noise realizations; the index set
/// is seeded by the fraction value.
pub fn keep_fraction_sweep(
    model: &DenoiserModel,
    schedule: &DiffusionSchedule,
    data: &Matrix,
    fractions: &[f64],
    n_samples: usize,
    config: &SweepConfig,
) -> Result<Vec<KeepFractionRow>> {
    if n_samples == 0 {
        return Err(invalid_arg!("keep-fraction sweep needs at least one sample"));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(invalid_arg!("keep fraction {f} outside (0, 1]"));
    }
    let p = model.param_count();
    let d = model.config().data_dim;
    let noises: Vec<NoiseRealization> = (0..n_samples as u64)
        .map(|i| NoiseRealization::generate(derive_seed(config.noise_seed, i), d, schedule.steps()))
        .collect();
    let options = FlareOptions { sampler: config.sampler, ..FlareOptions::default() };
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let m = (libm::ceil(fraction * p as f64) as usize).clamp(1, p);
        let kind = EstimatorKind::Flare { m };
        let mut index_rng = sub_rng(config.seed, fraction.to_bits());
        let mut pair_rng = rng_from_seed(derive_seed(config.seed, PAIR_STREAM));
        let posterior = build_posterior(model, data, schedule, kind, config.lambda, config.n_pairs, &mut index_rng, &mut pair_rng)?;
        let runs = flare_batch(model, schedule, &posterior, kind, &noises, options)?;
        let mean_score = runs.iter().map(|r| r.trace() / d as f64).sum::<f64>() / n_samples as f64;
        rows.push(KeepFractionRow { fraction, m, mean_score });
    }
    Ok(rows)
}
