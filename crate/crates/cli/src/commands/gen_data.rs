use std::collections::BTreeMap;

use serde::Serialize;

use flare_core::datasets::{generate, GeneratorConfig};

use super::{progress, write_manifest, Context};
use crate::config::stream;
use crate::error::Outcome;
use crate::io::{sha256_file, write_json, write_matrix};

pub const DATA_FILE: &str = "data.csv";
pub const METADATA_FILE: &str = "data.json";

#[derive(Serialize)]
struct Metadata<'a> {
    dataset: &'a str,
    generator: &'a GeneratorConfig,
    seed: u64,
    data_seed: u64,
    rows: usize,
    dim: usize,
    sha256: String,
}

/// Writes `data.csv` and its `data.json` sidecar.
pub fn gen_data(ctx: &Context) -> anyhow::Result<Outcome> {
    let r = ctx.config.resolve(None)?;
    let data_seed = r.sub_seed(stream::DATA);
    let data = generate(&r.generator, data_seed)?;
    let path = ctx.path(DATA_FILE);
    write_matrix(&path, &data.samples)?;
    let meta = Metadata {
        dataset: r.dataset.label(),
        generator: &r.generator,
        seed: r.seed,
        data_seed,
        rows: data.len(),
        dim: data.dim(),
        sha256: sha256_file(&path)?,
    };
    write_json(&ctx.path(METADATA_FILE), &meta)?;
    write_manifest(ctx, "gen_data_manifest.json", "gen-data", &r, BTreeMap::new(), &[DATA_FILE, METADATA_FILE], ())?;
    progress(format!("wrote {} samples of dimension {} to {}", data.len(), data.dim(), path.display()));
    Ok(Outcome::Success)
}
