use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use flare_core::denoiser::DenoiserModel;
use flare_core::training;

use super::{load_data, progress, schedule, write_manifest, Context};
use crate::checkpoint::{Checkpoint, ScheduleId};
use crate::config::stream;
use crate::error::Outcome;
use crate::io::write_rows;

pub const CHECKPOINT_FILE: &str = "checkpoint.flre";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Serialize)]
struct Details {
    schedule: ScheduleId,
    param_count: usize,
    head_param_count: usize,
    train_rows: usize,
    steps: usize,
    skipped_steps: u64,
    /// Mean batch loss over the last 100 steps.
    final_loss: f64,
}

/// Trains from a fresh initialization and writes the checkpoint and the
/// per-step loss.
pub fn train(ctx: &Context, data: Option<&Path>) -> anyhow::Result<Outcome> {
    let r = ctx.config.resolve(None)?;
    let schedule = schedule(&r)?;
    let (dataset, digest) = load_data(&r, data)?;
    let init = DenoiserModel::init(r.model, r.sub_seed(stream::INIT))?;
    progress(format!(
        "training {} parameters for {} steps on {} rows (T = {})",
        init.param_count(),
        r.train.steps,
        dataset.len(),
        schedule.steps()
    ));
    let outcome = training::train(&init, &dataset, &schedule, &r.train)?;
    let id = ScheduleId::of(ctx.config.schedule.kind, &schedule);
    Checkpoint::new(outcome.model, outcome.ema_model, r.seed, id.clone())?.save(&ctx.path(CHECKPOINT_FILE))?;
    write_rows(
        &ctx.path(LOSS_FILE),
        &["step", "loss"],
        outcome.losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]),
    )?;
    let tail = &outcome.losses[outcome.losses.len().saturating_sub(100)..];
    let final_loss = if tail.is_empty() { f64::NAN } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    let details = Details {
        schedule: id,
        param_count: init.param_count(),
        head_param_count: r.model.head_param_count(),
        train_rows: dataset.len(),
        steps: r.train.steps,
        skipped_steps: outcome.skipped_steps,
        final_loss,
    };
    let inputs = digest.map(|d| BTreeMap::from([("data", d)])).unwrap_or_default();
    write_manifest(ctx, "train_manifest.json", "train", &r, inputs, &[CHECKPOINT_FILE, LOSS_FILE], details)?;
    progress(format!("final loss {final_loss:.4}; wrote {}", ctx.path(CHECKPOINT_FILE).display()));
    Ok(Outcome::Success)
}
