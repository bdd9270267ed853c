//! Seeded synthetic benchmarks: a 3×3 Gaussian grid and three families of
//! time series on the endpoint-inclusive grid `τ_t = t/(L−1)`.
//!
//! Sample `i` draws all of its randomness from `derive_seed(seed, i)`, so
//! generation order never changes the output.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid_arg, Error, Result};
use crate::linalg::Matrix;
use crate::math::{exp, sin, sqrt};
use crate::rng::sub_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GridParams {
    pub n_per_mode: usize,
    pub noise_std: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self { n_per_mode: 6000, noise_std: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SineParams {
    pub n: usize,
    pub length: usize,
    pub noise_std: f64,
    /// Fixes every sign to `+1` or `−1` when set.
    pub force_sign: Option<i8>,
}

impl Default for SineParams {
    fn default() -> Self {
        Self { n: 5000, length: 10, noise_std: 0.1, force_sign: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ChirpParams {
    pub n: usize,
    pub length: usize,
    pub noise_std: f64,
    pub amplitude: (f64, f64),
    pub f0: (f64, f64),
    pub k: (f64, f64),
}

impl Default for ChirpParams {
    fn default() -> Self {
        Self { n: 8000, length: 80, noise_std: 0.02, amplitude: (0.6, 1.4), f0: (0.5, 1.0), k: (2.0, 5.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DampedParams {
    pub n: usize,
    pub length: usize,
    pub noise_std: f64,
    pub amplitude: (f64, f64),
    pub freq: (f64, f64),
    pub decay: (f64, f64),
    pub phase: (f64, f64),
}

impl Default for DampedParams {
    fn default() -> Self {
        Self {
            n: 8000,
            length: 40,
            noise_std: 0.02,
            amplitude: (0.6, 1.4),
            freq: (1.0, 2.0),
            decay: (0.5, 2.0),
            phase: (0.0, 2.0 * PI),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum GeneratorConfig {
    Grid(GridParams),
    BimodalSine(SineParams),
    Chirp(ChirpParams),
    DampedSine(DampedParams),
}

impl GeneratorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorConfig::Grid(_) => "grid",
            GeneratorConfig::BimodalSine(_) => "sine",
            GeneratorConfig::Chirp(_) => "chirp",
            GeneratorConfig::DampedSine(_) => "damped_sine",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorConfig::Grid(_) => 2,
            GeneratorConfig::BimodalSine(p) => p.length,
            GeneratorConfig::Chirp(p) => p.length,
            GeneratorConfig::DampedSine(p) => p.length,
        }
    }

    pub fn noise_std(&self) -> f64 {
        match self {
            GeneratorConfig::Grid(p) => p.noise_std,
            GeneratorConfig::BimodalSine(p) => p.noise_std,
            GeneratorConfig::Chirp(p) => p.noise_std,
            GeneratorConfig::DampedSine(p) => p.noise_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Matrix,
    pub config: GeneratorConfig,
    pub seed: u64,
    /// Per-sample latent parameters: grid `[mode]`, sine `[sign]`, chirp
    /// `[A, f₀, k]`, damped sine `[A, f, d, φ]`.
    pub latents: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    /// Noise-free version of sample `i`, rebuilt from its latents.
    pub fn clean_sample(&self, i: usize) -> Vec<f64> {
        clean_from_latents(&self.config, &self.latents[i])
    }

    /// Per-column mean and standard deviation.
    pub fn column_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, d) = self.samples.shape();
        let mut mean = alloc::vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(self.samples.row(i)) {
                *m += v / n as f64;
            }
        }
        let mut var = alloc::vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(self.samples.row(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        (mean, var.into_iter().map(sqrt).collect())
    }

    /// Shifts and scales every column to zero mean and unit variance.
    pub fn standardized(&self) -> Dataset {
        let (mean, std) = self.column_stats();
        let samples = Matrix::from_fn(self.len(), self.dim(), |i, j| {
            let s = if std[j] > 0.0 { std[j] } else { 1.0 };
            (self.samples[(i, j)] - mean[j]) / s
        });
        Dataset { samples, ..self.clone() }
    }
}

/// `τ_t = t/(L−1)`
pub fn time_grid(length: usize) -> Vec<f64> {
    if length == 1 {
        return alloc::vec![0.0];
    }
    (0..length).map(|t| t as f64 / (length - 1) as f64).collect()
}

pub const GRID_CENTERS: [(f64, f64); 9] =
    [(-1.0, -1.0), (-1.0, 0.0), (-1.0, 1.0), (0.0, -1.0), (0.0, 0.0), (0.0, 1.0), (1.0, -1.0), (1.0, 0.0), (1.0, 1.0)];

pub fn sine_value(sign: f64, tau: f64) -> f64 {
    sign * sin(2.0 * PI * tau)
}

pub fn chirp_value(amplitude: f64, f0: f64, k: f64, tau: f64) -> f64 {
    amplitude * sin(2.0 * PI * (f0 * tau + 0.5 * k * tau * tau))
}

pub fn damped_value(amplitude: f64, freq: f64, decay: f64, phase: f64, tau: f64) -> f64 {
    amplitude * exp(-decay * tau) * sin(2.0 * PI * freq * tau + phase)
}

fn clean_from_latents(config: &GeneratorConfig, z: &[f64]) -> Vec<f64> {
    match config {
        GeneratorConfig::Grid(_) => {
            let (cx, cy) = GRID_CENTERS[z[0] as usize];
            alloc::vec![cx, cy]
        }
        GeneratorConfig::BimodalSine(p) => time_grid(p.length).into_iter().map(|t| sine_value(z[0], t)).collect(),
        GeneratorConfig::Chirp(p) => time_grid(p.length).into_iter().map(|t| chirp_value(z[0], z[1], z[2], t)).collect(),
        GeneratorConfig::DampedSine(p) => {
            time_grid(p.length).into_iter().map(|t| damped_value(z[0], z[1], z[2], z[3], t)).collect()
        }
    }
}

fn uniform(rng: &mut crate::rng::Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(invalid_arg!("{name} range ({lo}, {hi}) is invalid"));
    }
    Ok(())
}

pub fn generate(config: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    let noise_std = config.noise_std();
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(invalid_arg!("noise standard deviation must be finite and non-negative, got {noise_std}"));
    }
    let (n, d) = match config {
        GeneratorConfig::Grid(p) => {
            if p.n_per_mode == 0 {
                return Err(invalid_arg!("n_per_mode must be >= 1"));
            }
            (9 * p.n_per_mode, 2)
        }
        GeneratorConfig::BimodalSine(p) => {
            if p.n < 2 {
                return Err(invalid_arg!("the bimodal sine needs n >= 2"));
            }
            if let Some(s) = p.force_sign {
                if s != 1 && s != -1 {
                    return Err(invalid_arg!("forced sign must be +1 or -1, got {s}"));
                }
            }
            (p.n, p.length)
        }
        GeneratorConfig::Chirp(p) => {
            check_range("amplitude", p.amplitude)?;
            check_range("f0", p.f0)?;
            check_range("k", p.k)?;
            (p.n, p.length)
        }
        GeneratorConfig::DampedSine(p) => {
            check_range("amplitude", p.amplitude)?;
            check_range("freq", p.freq)?;
            check_range("decay", p.decay)?;
            check_range("phase", p.phase)?;
            (p.n, p.length)
        }
    };
    if n == 0 || d == 0 {
        return Err(invalid_arg!("dataset needs at least one sample and one dimension"));
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidArgument(alloc::format!("{e}")))?;
    let mut samples = Matrix::zeros(n, d);
    let mut latents = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = sub_rng(seed, i as u64);
        let z = match config {
            GeneratorConfig::Grid(_) => alloc::vec![(i % 9) as f64],
            GeneratorConfig::BimodalSine(p) => {
                let sign = match p.force_sign {
                    Some(s) => s as f64,
                    None if rng.random_bool(0.5) => 1.0,
                    None => -1.0,
                };
                alloc::vec![sign]
            }
            GeneratorConfig::Chirp(p) => alloc::vec![uniform(&mut rng, p.amplitude), uniform(&mut rng, p.f0), uniform(&mut rng, p.k)],
            GeneratorConfig::DampedSine(p) => alloc::vec![
                uniform(&mut rng, p.amplitude),
                uniform(&mut rng, p.freq),
                uniform(&mut rng, p.decay),
                uniform(&mut rng, p.phase),
            ],
        };
        let clean = clean_from_latents(config, &z);
        for (dst, c) in samples.row_mut(i).iter_mut().zip(clean) {
            *dst = c + noise.sample(&mut rng);
        }
        latents.push(z);
    }
    Ok(Dataset { name: String::from(config.name()), samples, config: *config, seed, latents })
}
