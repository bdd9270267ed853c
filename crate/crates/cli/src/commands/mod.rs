mod ablate;
mod eval;
mod gen_data;
mod score;
mod train;
mod validate;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::Serialize;

use flare_core::datasets::{generate, Dataset};
use flare_core::diffusion::DiffusionSchedule;

pub use ablate::ablate_keep;
pub use eval::{eval, Comparison, MetricsFile, METRICS_VERSION};
pub use gen_data::gen_data;
pub use score::score;
pub use train::train;
pub use validate::{validate, Study};

use crate::checkpoint::{Checkpoint, ScheduleId};
use crate::config::{stream, Resolved, RunConfig};
use crate::io::{ensure_dir, sha256_file, write_json};

/// What every command receives: the config after command-line overrides
/// and the output directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub threads: usize,
}

impl Context {
    pub fn new(mut config: RunConfig, seed: Option<u64>, out: Option<PathBuf>, threads: usize) -> anyhow::Result<Self> {
        if let Some(s) = seed {
            config.seed = s;
        }
        let out = out.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
        config.output_dir = None;
        ensure_dir(&out)?;
        Ok(Self { config, out, threads: threads.max(1) })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self { file, sha256: sha256_file(path)? })
    }
}

/// Everything needed to rerun a command: the config, its resolution, and
/// digests of every input and output. Paths are recorded by file name only.
#[derive(Serialize)]
pub struct Manifest<'a, D: Serialize> {
    pub command: &'a str,
    pub tool_version: &'static str,
    pub config: &'a RunConfig,
    pub resolved: &'a Resolved,
    pub inputs: BTreeMap<&'a str, FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub details: D,
}

pub(crate) fn write_manifest<D: Serialize>(
    ctx: &Context,
    name: &str,
    command: &str,
    resolved: &Resolved,
    inputs: BTreeMap<&str, FileDigest>,
    outputs: &[&str],
    details: D,
) -> anyhow::Result<()> {
    let outputs = outputs.iter().map(|f| FileDigest::of(&ctx.path(f))).collect::<anyhow::Result<Vec<_>>>()?;
    let manifest = Manifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        config: &ctx.config,
        resolved,
        inputs,
        outputs,
        details,
    };
    write_json(&ctx.path(name), &manifest)
}

pub(crate) fn schedule(resolved: &Resolved) -> anyhow::Result<DiffusionSchedule> {
    Ok(DiffusionSchedule::cosine(resolved.schedule_steps)?)
}

/// The training set: read from `path`, or regenerated from the config.
pub(crate) fn load_data(resolved: &Resolved, path: Option<&Path>) -> anyhow::Result<(Dataset, Option<FileDigest>)> {
    match path {
        Some(p) => {
            let samples = crate::io::read_matrix(p)?;
            if samples.cols() != resolved.generator.dim() {
                anyhow::bail!("{}: {} columns for a {}-dim dataset", p.display(), samples.cols(), resolved.generator.dim());
            }
            let dataset = Dataset {
                name: resolved.dataset.label().to_string(),
                samples,
                config: resolved.generator,
                seed: 0,
                latents: Vec::new(),
            };
            Ok((dataset, Some(FileDigest::of(p)?)))
        }
        None => Ok((generate(&resolved.generator, resolved.sub_seed(stream::DATA))?, None)),
    }
}

/// Loads the checkpoint under the configured schedule and re-resolves the
/// config against its architecture.
pub(crate) fn load_checkpoint(ctx: &Context, path: &Path) -> anyhow::Result<(Checkpoint, Resolved, DiffusionSchedule)> {
    let schedule = schedule(&ctx.config.resolve(None)?)?;
    let ck = Checkpoint::load(path, &ScheduleId::of(ctx.config.schedule.kind, &schedule))?;
    let resolved = ctx.config.resolve(Some(ck.header.model)).with_context(|| format!("checkpoint {}", path.display()))?;
    Ok((ck, resolved, schedule))
}

pub(crate) fn progress(msg: impl AsRef<str>) {
    eprintln!("flare-uq: {}", msg.as_ref());
}
