use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use flare_core::diffusion::{NoiseRealization, SamplerKind};
use flare_core::laplace::PosteriorSummary;
use flare_core::linalg::Matrix;
use flare_core::rng::{derive_seed, rng_from_seed};
use flare_core::uncertainty::{
    build_posterior, flare_batch, predictive_variance_batch, EstimatorKind, FlareOptions, UncertaintyScore,
};

use super::{load_checkpoint, load_data, progress, write_manifest, Context, FileDigest};
use crate::config::stream;
use crate::error::Outcome;
use crate::io::{write_json, write_matrix, write_rows, write_scores};

pub const SAMPLES_FILE: &str = "samples.csv";

pub fn scores_file(label: &str) -> String {
    format!("scores_{label}.csv")
}

#[derive(Serialize)]
struct Details {
    estimator: EstimatorKind,
    label: &'static str,
    m: usize,
    lambda: f64,
    sampler: SamplerKind,
    seed: u64,
    noise_seed: u64,
    n_samples: usize,
    filter_percentile: f64,
    schedule_hash: String,
    checkpoint_hash: String,
    posterior: PosteriorSummary,
    /// Largest accumulated injected-noise trace; `None` for the
    /// total-variance baseline.
    max_aleatoric_trace: Option<f64>,
}

/// Samples `n` reverse paths from the checkpoint's EMA parameters and scores
/// each with the configured estimator. Sample `i` uses the noise realization
/// seeded `derive_seed(noise_seed, i)`, so every estimator sees the same
/// paths.
pub fn score(ctx: &Context, checkpoint: &Path, n_samples: Option<usize>, data: Option<&Path>) -> anyhow::Result<Outcome> {
    let (ck, r, schedule) = load_checkpoint(ctx, checkpoint)?;
    let model = &ck.ema;
    let n = n_samples.unwrap_or(r.n_samples);
    if n == 0 {
        anyhow::bail!("n_samples must be positive");
    }
    let (train, data_digest) = load_data(&r, data)?;
    let d = model.config().data_dim;
    let noise_seed = r.sub_seed(stream::NOISE);
    let noises: Vec<NoiseRealization> =
        (0..n as u64).map(|i| NoiseRealization::generate(derive_seed(noise_seed, i), d, schedule.steps())).collect();
    let mut index_rng = rng_from_seed(r.sub_seed(stream::INDEX));
    let mut pair_rng = rng_from_seed(r.sub_seed(stream::PAIRS));
    let posterior =
        build_posterior(model, &train.samples, &schedule, r.estimator, r.lambda, r.n_pairs, &mut index_rng, &mut pair_rng)?;
    let label = r.estimator.label();
    let summary = posterior.summary();
    progress(format!("scoring {n} samples with {label} (m = {}, T = {})", summary.m, schedule.steps()));

    let mut x0 = Matrix::zeros(n, d);
    let (scores, aleatoric): (Vec<UncertaintyScore>, Option<Vec<f64>>) = match r.estimator {
        EstimatorKind::PredictiveVariance { draws } => {
            let mut rng = rng_from_seed(r.sub_seed(stream::DRAWS));
            let runs = predictive_variance_batch(model, &schedule, &posterior, draws, r.sampler, &noises, false, &mut rng)?;
            for (i, run) in runs.iter().enumerate() {
                x0.row_mut(i).copy_from_slice(&run.x0);
            }
            (runs.iter().enumerate().map(|(i, run)| run.score(i)).collect(), None)
        }
        kind => {
            let options = FlareOptions { sampler: r.sampler, ..FlareOptions::default() };
            let runs = flare_batch(model, &schedule, &posterior, kind, &noises, options)?;
            for (i, run) in runs.iter().enumerate() {
                x0.row_mut(i).copy_from_slice(&run.x0);
            }
            let aleatoric = runs.iter().map(|run| run.aleatoric_trace).collect();
            (runs.iter().enumerate().map(|(i, run)| run.score(i)).collect(), Some(aleatoric))
        }
    };

    let scores_name = scores_file(label);
    let posterior_name = format!("posterior_{label}.json");
    write_matrix(&ctx.path(SAMPLES_FILE), &x0)?;
    write_scores(&ctx.path(&scores_name), &scores)?;
    write_json(&ctx.path(&posterior_name), &summary)?;
    let mut outputs = vec![SAMPLES_FILE, scores_name.as_str(), posterior_name.as_str()];
    let aleatoric_name = format!("aleatoric_{label}.csv");
    if let Some(a) = &aleatoric {
        write_rows(
            &ctx.path(&aleatoric_name),
            &["sample_id", "aleatoric_trace"],
            a.iter().enumerate().map(|(i, v)| vec![i.to_string(), v.to_string()]),
        )?;
        outputs.push(aleatoric_name.as_str());
    }

    let checkpoint_digest = FileDigest::of(checkpoint)?;
    let details = Details {
        estimator: r.estimator,
        label,
        m: summary.m,
        lambda: r.lambda,
        sampler: r.sampler,
        seed: r.seed,
        noise_seed,
        n_samples: n,
        filter_percentile: r.filter_percentile,
        schedule_hash: ck.header.schedule.hash.clone(),
        checkpoint_hash: checkpoint_digest.sha256.clone(),
        posterior: summary,
        max_aleatoric_trace: aleatoric.map(|a| a.iter().fold(0.0, |m: f64, v| m.max(*v))),
    };
    let mut inputs = BTreeMap::from([("checkpoint", checkpoint_digest)]);
    if let Some(dg) = data_digest {
        inputs.insert("data", dg);
    }
    write_manifest(ctx, &format!("score_{label}_manifest.json"), "score", &r, inputs, &outputs, details)?;
    progress(format!("wrote {} and {}", SAMPLES_FILE, scores_name));
    Ok(Outcome::Success)
}
