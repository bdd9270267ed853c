use alloc::vec::Vec;

use rand::Rng as _;

use super::metrics::{gap_closure, pooled_accuracy, roc_auc};
use crate::error::{invalid_arg, shape_err, Result};
use crate::rng::Rng;

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const MIN_RESAMPLES: usize = 100;

/// Discriminator metrics of one filtered generated set against fixed real
/// scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredMetrics {
    pub acc_unfiltered: f64,
    pub acc_filtered: f64,
    /// `None` when the unfiltered accuracy sits at chance.
    pub gap_closure: Option<f64>,
    pub auc_unfiltered: f64,
    pub auc_filtered: f64,
}

pub fn filtered_metrics(real: &[f64], unfiltered: &[f64], filtered: &[f64]) -> Result<FilteredMetrics> {
    let acc_unfiltered = pooled_accuracy(real, unfiltered)?;
    let acc_filtered = pooled_accuracy(real, filtered)?;
    Ok(FilteredMetrics {
        acc_unfiltered,
        acc_filtered,
        gap_closure: gap_closure(acc_filtered, acc_unfiltered).ok(),
        auc_unfiltered: roc_auc(real, unfiltered)?,
        auc_filtered: roc_auc(real, filtered)?,
    })
}

fn resample(values: &[f64], rng: &mut Rng) -> Vec<f64> {
    (0..values.len()).map(|_| values[rng.random_range(0..values.len())]).collect()
}

fn check(resamples: usize) -> Result<()> {
    if resamples < MIN_RESAMPLES {
        return Err(invalid_arg!("bootstrap needs at least {MIN_RESAMPLES} resamples, got {resamples}"));
    }
    Ok(())
}

/// One-sided p-value for `H₀: gap-closure ≤ 0`. The filtered and unfiltered
/// generated scores are resampled independently with replacement; real
/// scores stay fixed. Resamples with an undefined gap-closure count toward
/// the null.
pub fn bootstrap_p(real: &[f64], filtered: &[f64], unfiltered: &[f64], resamples: usize, rng: &mut Rng) -> Result<f64> {
    check(resamples)?;
    if real.is_empty() || filtered.is_empty() || unfiltered.is_empty() {
        return Err(invalid_arg!("bootstrap needs nonempty real, filtered and unfiltered scores"));
    }
    let mut null = 0usize;
    for _ in 0..resamples {
        let u = resample(unfiltered, rng);
        let f = resample(filtered, rng);
        let gc = gap_closure(pooled_accuracy(real, &f)?, pooled_accuracy(real, &u)?).ok();
        if gc.is_none_or(|g| g <= 0.0) {
            null += 1;
        }
    }
    Ok((1 + null) as f64 / (1 + resamples) as f64)
}

/// One-sided p-value for `H₀: statistic ≤ 0` when the generated rows are
/// resampled once per replicate and shared by every method. `retained[k][i]`
/// marks generated row `i` as kept by method `k`; `statistic` receives the
/// per-method metrics of the replicate and may return `None` for an
/// undefined value, which counts toward the null.
pub fn paired_bootstrap_p<F>(
    real: &[f64],
    generated: &[f64],
    retained: &[Vec<bool>],
    resamples: usize,
    rng: &mut Rng,
    statistic: F,
) -> Result<f64>
where
    F: Fn(&[FilteredMetrics]) -> Option<f64>,
{
    check(resamples)?;
    if real.is_empty() || generated.is_empty() {
        return Err(invalid_arg!("paired bootstrap needs nonempty real and generated scores"));
    }
    if let Some(m) = retained.iter().find(|m| m.len() != generated.len()) {
        return Err(shape_err!("retention mask of length {} for {} generated rows", m.len(), generated.len()));
    }
    let n = generated.len();
    let mut null = 0usize;
    let mut filtered = Vec::with_capacity(n);
    for _ in 0..resamples {
        let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let unfiltered: Vec<f64> = picks.iter().map(|&i| generated[i]).collect();
        let mut metrics = Vec::with_capacity(retained.len());
        for mask in retained {
            filtered.clear();
            filtered.extend(picks.iter().filter(|&&i| mask[i]).map(|&i| generated[i]));
            match filtered_metrics(real, &unfiltered, &filtered) {
                Ok(m) => metrics.push(m),
                Err(_) => break,
            }
        }
        let stat = if metrics.len() == retained.len() { statistic(&metrics) } else { None };
        if stat.is_none_or(|s| s <= 0.0) {
            null += 1;
        }
    }
    Ok((1 + null) as f64 / (1 + resamples) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use alloc::vec;
    use rand_distr::{Distribution, Uniform};

    fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let u = Uniform::new(lo, hi).unwrap();
        (0..n).map(|_| u.sample(&mut rng)).collect()
    }

    #[test]
    fn null_case_is_not_rejected() {
        let real = uniform(300, 0.3, 1.0, 1);
        let generated = uniform(300, 0.0, 0.7, 2);
        let p = bootstrap_p(&real, &generated, &generated, DEFAULT_RESAMPLES, &mut rng_from_seed(3)).unwrap();
        assert!(p > 0.2, "{p}");
    }

    #[test]
    fn removing_off_manifold_points_is_significant() {
        let real = uniform(300, 0.5, 1.0, 4);
        let on = uniform(150, 0.5, 1.0, 5);
        let mut unfiltered = on.clone();
        unfiltered.extend(uniform(150, 0.0, 0.5, 6));
        let p = bootstrap_p(&real, &on, &unfiltered, DEFAULT_RESAMPLES, &mut rng_from_seed(7)).unwrap();
        assert!(p < 0.01, "{p}");
    }

    #[test]
    fn doubling_resamples_is_stable() {
        let real = uniform(200, 0.2, 1.0, 8);
        let unfiltered = uniform(200, 0.0, 0.8, 9);
        let filtered: Vec<f64> = unfiltered.iter().copied().filter(|s| *s > 0.1).collect();
        let p1 = bootstrap_p(&real, &filtered, &unfiltered, 1000, &mut rng_from_seed(10)).unwrap();
        let p2 = bootstrap_p(&real, &filtered, &unfiltered, 2000, &mut rng_from_seed(10)).unwrap();
        assert!((p1 - p2).abs() < 0.02, "{p1} vs {p2}");
        assert!(bootstrap_p(&real, &filtered, &unfiltered, 50, &mut rng_from_seed(10)).is_err());
    }

    #[test]
    fn paired_comparison_prefers_the_better_filter() {
        let real = uniform(300, 0.5, 1.0, 11);
        let mut generated = uniform(150, 0.5, 1.0, 12);
        generated.extend(uniform(150, 0.0, 0.5, 13));
        let good: Vec<bool> = (0..300).map(|i| i < 150).collect();
        let random: Vec<bool> = (0..300).map(|i| i % 2 == 0).collect();
        let masks = vec![good, random];
        let better = |m: &[FilteredMetrics]| Some(m[0].gap_closure? - m[1].gap_closure?);
        let p = paired_bootstrap_p(&real, &generated, &masks, 500, &mut rng_from_seed(14), better).unwrap();
        assert!(p < 0.01, "{p}");
        let worse = |m: &[FilteredMetrics]| Some(m[1].gap_closure? - m[0].gap_closure?);
        let q = paired_bootstrap_p(&real, &generated, &masks, 500, &mut rng_from_seed(14), worse).unwrap();
        assert!(q > 0.9, "{q}");
        assert!(paired_bootstrap_p(&real, &generated, &[vec![true]], 500, &mut rng_from_seed(1), better).is_err());
    }

    #[test]
    fn filtered_metrics_fields() {
        let m = filtered_metrics(&[0.9, 0.8], &[0.1, 0.7], &[0.7, 0.7]).unwrap();
        assert_eq!(m.acc_unfiltered, 0.75);
        assert_eq!(m.acc_filtered, 0.5);
        assert_eq!(m.gap_closure, Some(100.0));
        assert_eq!(m.auc_unfiltered, 1.0);
    }
}
