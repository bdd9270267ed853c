use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use flare_core::uncertainty::{keep_fraction_sweep, KeepFractionRow, SweepConfig};

use super::{load_checkpoint, load_data, progress, write_manifest, Context, FileDigest};
use crate::config::stream;
use crate::error::Outcome;
use crate::io::{write_rows, write_text};
use crate::plot::{loglog, Series};

pub const ABLATE_FILE: &str = "ablate_keep.csv";
pub const ABLATE_PLOT: &str = "ablate_keep.svg";

#[derive(Serialize)]
struct Details<'a> {
    seed: u64,
    noise_seed: u64,
    n_samples: usize,
    param_count: usize,
    rows: &'a [KeepFractionRow],
}

/// Mean FLARE score against the subnetwork keep fraction on shared noise
/// realizations.
pub fn ablate_keep(ctx: &Context, checkpoint: &Path, data: Option<&Path>) -> anyhow::Result<Outcome> {
    let (ck, r, schedule) = load_checkpoint(ctx, checkpoint)?;
    let model = &ck.ema;
    let (train, data_digest) = load_data(&r, data)?;
    let config = SweepConfig {
        lambda: r.lambda,
        n_pairs: r.n_pairs,
        sampler: r.sampler,
        seed: r.sub_seed(stream::INDEX),
        noise_seed: r.sub_seed(stream::NOISE),
    };
    progress(format!("keep-fraction sweep over {:?} with {} samples", r.fractions, r.ablate_samples));
    let rows = keep_fraction_sweep(model, &schedule, &train.samples, &r.fractions, r.ablate_samples, &config)?;
    write_rows(
        &ctx.path(ABLATE_FILE),
        &["fraction", "m", "mean_score"],
        rows.iter().map(|row| vec![row.fraction.to_string(), row.m.to_string(), row.mean_score.to_string()]),
    )?;
    let x: Vec<f64> = rows.iter().map(|row| row.fraction).collect();
    let y: Vec<f64> = rows.iter().map(|row| row.mean_score).collect();
    let svg = loglog("mean score against keep fraction", "keep fraction", "mean tr(Σ_0)/d", &[Series { label: "flare", x: &x, y: &y }]);
    write_text(&ctx.path(ABLATE_PLOT), &svg)?;
    let mut inputs = BTreeMap::from([("checkpoint", FileDigest::of(checkpoint)?)]);
    if let Some(dg) = data_digest {
        inputs.insert("data", dg);
    }
    let details = Details {
        seed: config.seed,
        noise_seed: config.noise_seed,
        n_samples: r.ablate_samples,
        param_count: model.param_count(),
        rows: &rows,
    };
    write_manifest(ctx, "ablate_keep_manifest.json", "ablate-keep", &r, inputs, &[ABLATE_FILE, ABLATE_PLOT], details)?;
    for row in &rows {
        println!("fraction {:.2}: m = {}, mean score {:.6e}", row.fraction, row.m, row.mean_score);
    }
    Ok(Outcome::Success)
}
