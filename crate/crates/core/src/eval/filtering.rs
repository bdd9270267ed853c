use alloc::string::String;
use alloc::vec::Vec;

use super::bootstrap::{bootstrap_p, filtered_metrics};
use super::discriminator::{train_discriminator, DiscriminatorConfig, DiscriminatorFit};
use super::metrics::filter_by_score;
use crate::error::{invalid_arg, shape_err, Result};
use crate::linalg::Matrix;
use crate::rng::sub_rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub dataset: String,
    pub method: String,
    pub acc_unfiltered: f64,
    pub acc_filtered: f64,
    /// `None` when the unfiltered accuracy is at chance.
    pub gap_closure_pct: Option<f64>,
    pub roc_auc_unfiltered: f64,
    /// AUC of real against retained generated held-out scores.
    pub roc_auc: f64,
    pub bootstrap_p: Option<f64>,
    pub percentile: f64,
    pub n_generated: usize,
    pub n_retained: usize,
    /// Retained generated rows that fall in the discriminator's eval split.
    pub n_eval_retained: usize,
    pub seed: u64,
}

/// Everything needed to compare methods under one shared discriminator.
#[derive(Debug, Clone)]
pub struct FilteringStudy {
    pub fit: DiscriminatorFit,
    /// Per method, which held-out generated rows (in `fit.generated_eval`
    /// order) were retained.
    pub eval_masks: Vec<Vec<bool>>,
    pub reports: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteringConfig {
    pub dataset: String,
    pub percentile: f64,
    pub resamples: usize,
    pub discriminator: DiscriminatorConfig,
    pub seed: u64,
}

/// Trains one discriminator on real vs unfiltered generated rows, then
/// scores each method's lowest-uncertainty `percentile` on the held-out
/// split.
pub fn evaluate_filtering(
    real: &Matrix,
    generated: &Matrix,
    methods: &[(String, Vec<f64>)],
    config: &FilteringConfig,
) -> Result<FilteringStudy> {
    if methods.is_empty() {
        return Err(invalid_arg!("no scoring methods to evaluate"));
    }
    if let Some((name, s)) = methods.iter().find(|(_, s)| s.len() != generated.rows()) {
        return Err(shape_err!("method {name} has {} scores for {} generated rows", s.len(), generated.rows()));
    }
    let fit = train_discriminator(real, generated, &config.discriminator)?;
    let mut eval_masks = Vec::with_capacity(methods.len());
    let mut reports = Vec::with_capacity(methods.len());
    for (k, (name, scores)) in methods.iter().enumerate() {
        let kept = filter_by_score(scores, config.percentile)?;
        let mut keep = alloc::vec![false; generated.rows()];
        kept.iter().for_each(|&i| keep[i] = true);
        let mask: Vec<bool> = fit.generated_eval.iter().map(|&i| keep[i]).collect();
        let filtered: Vec<f64> = fit.generated_eval_scores.iter().zip(&mask).filter(|(_, m)| **m).map(|(s, _)| *s).collect();
        let n_eval_retained = filtered.len();
        if filtered.is_empty() {
            return Err(invalid_arg!("method {name} retains no held-out generated rows"));
        }
        let m = filtered_metrics(&fit.real_eval_scores, &fit.generated_eval_scores, &filtered)?;
        let p = match m.gap_closure {
            Some(_) => Some(bootstrap_p(
                &fit.real_eval_scores,
                &filtered,
                &fit.generated_eval_scores,
                config.resamples,
                &mut sub_rng(config.seed, k as u64),
            )?),
            None => None,
        };
        reports.push(MetricsReport {
            dataset: config.dataset.clone(),
            method: name.clone(),
            acc_unfiltered: m.acc_unfiltered,
            acc_filtered: m.acc_filtered,
            gap_closure_pct: m.gap_closure,
            roc_auc_unfiltered: m.auc_unfiltered,
            roc_auc: m.auc_filtered,
            bootstrap_p: p,
            percentile: config.percentile,
            n_generated: generated.rows(),
            n_retained: kept.len(),
            n_eval_retained,
            seed: config.seed,
        });
        eval_masks.push(mask);
    }
    Ok(FilteringStudy { fit, eval_masks, reports })
}
