use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::bail;
use serde::{Deserialize, Serialize};

use flare_core::eval::{
    evaluate_filtering, filter_by_score, paired_bootstrap_p, FilteredMetrics, FilteringConfig, MetricsReport,
};
use flare_core::rng::sub_rng;

use super::{progress, write_manifest, Context, FileDigest};
use crate::config::stream;
use crate::error::{CliError, Outcome};
use crate::io::{read_matrix, read_scores, write_json, write_rows, write_text};
use crate::plot::score_scatter;

pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_VERSION: u32 = 1;
/// Bootstrap stream offset for the pairwise comparisons.
const COMPARISON_STREAM: u64 = 1 << 32;

/// One ordered pair of methods on the shared discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method: String,
    pub baseline: String,
    /// `gc(method) − gc(baseline)` in percentage points.
    pub gap_closure_difference: Option<f64>,
    /// Paired bootstrap p-value for `H₀: difference ≤ 0`.
    pub gap_closure_p: f64,
    /// `|AUC(baseline) − 0.5| − |AUC(method) − 0.5|`.
    pub auc_distance_difference: f64,
    pub auc_distance_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub version: u32,
    pub dataset: String,
    pub percentile: f64,
    pub n_real: usize,
    pub n_real_eval: usize,
    pub n_generated_eval: usize,
    pub discriminator_final_loss: f64,
    pub reports: Vec<MetricsReport>,
    pub comparisons: Vec<Comparison>,
}

/// `name=path`, or a path whose stem `scores_NAME` names the method.
fn parse_method(spec: &str) -> anyhow::Result<(String, PathBuf)> {
    if let Some((name, path)) = spec.split_once('=') {
        if name.is_empty() {
            bail!("empty method name in {spec:?}");
        }
        return Ok((name.to_string(), PathBuf::from(path)));
    }
    let path = PathBuf::from(spec);
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = stem.strip_prefix("scores_").unwrap_or(&stem).to_string();
    if name.is_empty() {
        bail!("cannot infer a method name from {spec:?}; use NAME=PATH");
    }
    Ok((name, path))
}

fn difference(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

fn auc_distance(m: &FilteredMetrics) -> f64 {
    (m.auc_filtered - 0.5).abs()
}

/// Trains one discriminator on real against unfiltered generated samples
/// and reports every method's filtered metrics, plus paired bootstrap tests
/// between every ordered pair of methods.
pub fn eval(ctx: &Context, real: &Path, samples: &Path, scores: &[String], plot: bool) -> anyhow::Result<Outcome> {
    let r = ctx.config.resolve(None)?;
    let real_m = read_matrix(real)?;
    let generated = read_matrix(samples)?;
    if real_m.cols() != generated.cols() {
        return Err(CliError::Schema(format!(
            "real data has {} columns but samples have {}",
            real_m.cols(),
            generated.cols()
        ))
        .into());
    }
    let mut methods: Vec<(String, Vec<f64>)> = Vec::new();
    let mut inputs = BTreeMap::from([("real", FileDigest::of(real)?), ("samples", FileDigest::of(samples)?)]);
    let mut score_digests = Vec::new();
    for spec in scores {
        let (name, path) = parse_method(spec)?;
        if methods.iter().any(|(n, _)| *n == name) {
            return Err(CliError::Config(format!("method {name} given twice")).into());
        }
        let s = read_scores(&path)?;
        if s.len() != generated.rows() {
            return Err(CliError::Schema(format!(
                "{}: {} scores for {} samples",
                path.display(),
                s.len(),
                generated.rows()
            ))
            .into());
        }
        score_digests.push((name.clone(), FileDigest::of(&path)?));
        methods.push((name, s));
    }
    let config = FilteringConfig {
        dataset: r.dataset.label().to_string(),
        percentile: r.filter_percentile,
        resamples: r.eval.resamples,
        discriminator: r.eval.discriminator,
        seed: r.sub_seed(stream::BOOTSTRAP),
    };
    progress(format!("training the discriminator on {} real and {} generated rows", real_m.rows(), generated.rows()));
    let study = evaluate_filtering(&real_m, &generated, &methods, &config)?;
    let fit = &study.fit;

    let mut comparisons = Vec::new();
    let mut pair = 0u64;
    for (a, (name_a, _)) in methods.iter().enumerate() {
        for (b, (name_b, _)) in methods.iter().enumerate() {
            if a == b {
                continue;
            }
            let masks = [study.eval_masks[a].clone(), study.eval_masks[b].clone()];
            let mut rng = sub_rng(config.seed, COMPARISON_STREAM + 2 * pair);
            let gap_closure_p = paired_bootstrap_p(
                &fit.real_eval_scores,
                &fit.generated_eval_scores,
                &masks,
                config.resamples,
                &mut rng,
                |m| difference(m[0].gap_closure, m[1].gap_closure),
            )?;
            let mut rng = sub_rng(config.seed, COMPARISON_STREAM + 2 * pair + 1);
            let auc_distance_p = paired_bootstrap_p(
                &fit.real_eval_scores,
                &fit.generated_eval_scores,
                &masks,
                config.resamples,
                &mut rng,
                |m| Some(auc_distance(&m[1]) - auc_distance(&m[0])),
            )?;
            let (ra, rb) = (&study.reports[a], &study.reports[b]);
            comparisons.push(Comparison {
                method: name_a.clone(),
                baseline: name_b.clone(),
                gap_closure_difference: difference(ra.gap_closure_pct, rb.gap_closure_pct),
                gap_closure_p,
                auc_distance_difference: (rb.roc_auc - 0.5).abs() - (ra.roc_auc - 0.5).abs(),
                auc_distance_p,
            });
            pair += 1;
        }
    }

    let tail = &fit.losses[fit.losses.len().saturating_sub(50)..];
    let metrics = MetricsFile {
        version: METRICS_VERSION,
        dataset: config.dataset.clone(),
        percentile: config.percentile,
        n_real: real_m.rows(),
        n_real_eval: fit.real_eval.len(),
        n_generated_eval: fit.generated_eval.len(),
        discriminator_final_loss: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        reports: study.reports.clone(),
        comparisons,
    };
    write_json(&ctx.path(METRICS_FILE), &metrics)?;
    write_rows(
        &ctx.path("discriminator_loss.csv"),
        &["step", "loss"],
        fit.losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]),
    )?;
    let mut outputs = vec![METRICS_FILE.to_string(), "discriminator_loss.csv".to_string()];
    if plot && generated.cols() >= 2 {
        let (x, y) = (generated.column(0), generated.column(1));
        for (name, s) in &methods {
            let mut keep = vec![false; s.len()];
            filter_by_score(s, config.percentile)?.into_iter().for_each(|i| keep[i] = true);
            let svg = score_scatter(&format!("{} scores ({} kept: filled)", name, config.percentile), &x, &y, s, Some(&keep));
            let file = format!("filter_{name}.svg");
            write_text(&ctx.path(&file), &svg)?;
            outputs.push(file);
        }
    }
    for (name, dg) in &score_digests {
        inputs.insert(name.as_str(), dg.clone());
    }
    let outputs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(ctx, "eval_manifest.json", "eval", &r, inputs, &outputs, ())?;
    for rep in &metrics.reports {
        let gc = rep.gap_closure_pct.map_or("n/a".to_string(), |g| format!("{g:+.1}%"));
        let p = rep.bootstrap_p.map_or("n/a".to_string(), |p| format!("{p:.4}"));
        println!(
            "{}: acc {:.4} -> {:.4}, gap-closure {gc} (p = {p}), AUC {:.4} -> {:.4}",
            rep.method, rep.acc_unfiltered, rep.acc_filtered, rep.roc_auc_unfiltered, rep.roc_auc
        );
    }
    Ok(Outcome::Success)
}
