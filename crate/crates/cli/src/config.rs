//! Versioned JSON run configuration. Every section is optional except the
//! dataset and the seed; omitted values fall back to per-dataset presets.

use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use flare_core::datasets::{ChirpParams, DampedParams, GeneratorConfig, GridParams, SineParams};
use flare_core::denoiser::ModelConfig;
use flare_core::diffusion::SamplerKind;
use flare_core::eval::{DiscriminatorConfig, SketchInstanceSpec, CROSS_TERM_LAMBDA, DEFAULT_RESAMPLES};
use flare_core::laplace::{DEFAULT_GGN_PAIRS, DEFAULT_LAMBDA};
use flare_core::rng::derive_seed;
use flare_core::training::TrainConfig;
use flare_core::uncertainty::EstimatorKind;

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Sub-seed streams derived from the run seed.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const INDEX: u64 = 4;
    pub const PAIRS: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const DISCRIMINATOR: u64 = 7;
    pub const BOOTSTRAP: u64 = 8;
    pub const DRAWS: u64 = 9;
    pub const STUDY: u64 = 10;
}

pub const DEFAULT_KEEP_FRACTIONS: [f64; 5] = [0.01, 0.05, 0.10, 0.30, 0.50];
pub const DEFAULT_SKETCH_GRID: [usize; 4] = [32, 64, 128, 256];
pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.005, 0.01];
pub const CHIRP_SUBNET_SIZE: usize = 4412;
pub const PREDICTIVE_DRAWS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Grid,
    Sine,
    Chirp,
    DampedSine,
}

impl DatasetName {
    pub fn label(self) -> &'static str {
        match self {
            DatasetName::Grid => "grid",
            DatasetName::Sine => "sine",
            DatasetName::Chirp => "chirp",
            DatasetName::DampedSine => "damped_sine",
        }
    }

    pub fn hidden(self) -> usize {
        match self {
            DatasetName::Grid | DatasetName::Sine => 32,
            DatasetName::Chirp | DatasetName::DampedSine => 128,
        }
    }

    pub fn steps(self) -> usize {
        match self {
            DatasetName::Grid => 800,
            _ => 600,
        }
    }

    pub fn train(self) -> TrainConfig {
        let (lr, batch) = match self {
            DatasetName::Grid => (5e-6, 256),
            DatasetName::Sine => (5e-4, 512),
            DatasetName::Chirp | DatasetName::DampedSine => (5e-4, 256),
        };
        TrainConfig { lr, batch, ..TrainConfig::default() }
    }

    pub fn filter_percentile(self) -> f64 {
        match self {
            DatasetName::Grid | DatasetName::Sine => 50.0,
            DatasetName::Chirp | DatasetName::DampedSine => 25.0,
        }
    }

    pub fn subnet_size(self, p: usize) -> usize {
        match self {
            DatasetName::Grid | DatasetName::Sine => (p / 2).max(1),
            DatasetName::Chirp | DatasetName::DampedSine => CHIRP_SUBNET_SIZE.min(p),
        }
    }

    fn generator(self, overrides: &Map<String, Value>) -> anyhow::Result<GeneratorConfig> {
        Ok(match self {
            DatasetName::Grid => GeneratorConfig::Grid(merged(&GridParams::default(), overrides, "dataset.overrides")?),
            DatasetName::Sine => {
                GeneratorConfig::BimodalSine(merged(&SineParams::default(), overrides, "dataset.overrides")?)
            }
            DatasetName::Chirp => GeneratorConfig::Chirp(merged(&ChirpParams::default(), overrides, "dataset.overrides")?),
            DatasetName::DampedSine => {
                GeneratorConfig::DampedSine(merged(&DampedParams::default(), overrides, "dataset.overrides")?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub name: DatasetName,
    /// Generator parameters replacing the preset's.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub overrides: Map<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Option<usize>,
    pub n_blocks: Option<usize>,
    pub time_embed_dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSection {
    Flare {
        #[serde(default)]
        m: Option<usize>,
    },
    LastLayer,
    FullFisher,
    PredictiveVariance {
        #[serde(default)]
        draws: Option<usize>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorSection {
    pub lambda: Option<f64>,
    pub n_pairs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchSection {
    #[serde(skip_serializing_if = "Map::is_empty")]
    pub instance: Map<String, Value>,
    pub m_grid: Option<Vec<usize>>,
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Bootstrap replicates.
    pub resamples: Option<usize>,
    /// Posterior draws of the cross-term study.
    pub draws: Option<usize>,
    /// Cross-term thresholds in percent.
    pub thresholds: Option<Vec<f64>>,
    /// Shared paths of the cross-term study.
    pub paths: Option<usize>,
    pub cross_term_lambda: Option<f64>,
    /// Random instances of the unroll and least-squares checks.
    pub trials: Option<usize>,
    pub prop1_draws: Option<usize>,
    #[serde(skip_serializing_if = "Map::is_empty")]
    pub discriminator: Map<String, Value>,
    pub sketch: SketchSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub fractions: Option<Vec<f64>>,
    pub n_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub train: Map<String, Value>,
    #[serde(default)]
    pub estimator: Option<EstimatorSection>,
    #[serde(default)]
    pub posterior: PosteriorSection,
    #[serde(default)]
    pub sampler: Option<SamplerKind>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub filter_percentile: Option<f64>,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub ablate: AblateSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// A config with every section at its preset.
    pub fn preset(name: DatasetName, seed: u64) -> Self {
        Self {
            version: CONFIG_VERSION,
            seed,
            dataset: DatasetSection { name, overrides: Map::new() },
            model: ModelSection::default(),
            schedule: ScheduleSection::default(),
            train: Map::new(),
            estimator: None,
            posterior: PosteriorSection::default(),
            sampler: None,
            n_samples: None,
            filter_percentile: None,
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if config.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                config.version
            ))
            .into());
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn model_config(&self) -> anyhow::Result<ModelConfig> {
        let name = self.dataset.name;
        let data_dim = name.generator(&self.dataset.overrides)?.dim();
        let m = &self.model;
        let config = ModelConfig {
            data_dim,
            hidden: m.hidden.unwrap_or(name.hidden()),
            n_blocks: m.n_blocks.unwrap_or(2),
            time_embed_dim: m.time_embed_dim.unwrap_or(32),
            total_steps: self.schedule.steps.unwrap_or(name.steps()),
        };
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    /// Fills every default. `model` overrides the architecture implied by the
    /// config, e.g. with the one stored in a checkpoint.
    pub fn resolve(&self, model: Option<ModelConfig>) -> anyhow::Result<Resolved> {
        let name = self.dataset.name;
        let generator = name.generator(&self.dataset.overrides)?;
        let model = match model {
            Some(m) => m,
            None => self.model_config()?,
        };
        if model.data_dim != generator.dim() {
            return Err(CliError::Schema(format!(
                "model dimension {} does not match dataset dimension {}",
                model.data_dim,
                generator.dim()
            ))
            .into());
        }
        let steps = self.schedule.steps.unwrap_or(name.steps());
        if steps < 2 {
            return Err(CliError::Config(format!("schedule.steps must be at least 2, got {steps}")).into());
        }
        if model.total_steps != steps {
            return Err(CliError::Schema(format!(
                "model embeds T = {} but the schedule has T = {steps}",
                model.total_steps
            ))
            .into());
        }
        reject_seed(&self.train, "train")?;
        let mut train: TrainConfig = merged(&name.train(), &self.train, "train")?;
        train.seed = derive_seed(self.seed, stream::TRAIN);
        train.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let p = model.param_count();
        let estimator = match self.estimator.unwrap_or(EstimatorSection::Flare { m: None }) {
            EstimatorSection::Flare { m } => EstimatorKind::Flare { m: m.unwrap_or(name.subnet_size(p)) },
            EstimatorSection::LastLayer => EstimatorKind::LastLayer,
            EstimatorSection::FullFisher => EstimatorKind::FullFisher,
            EstimatorSection::PredictiveVariance { draws } => {
                EstimatorKind::PredictiveVariance { draws: draws.unwrap_or(PREDICTIVE_DRAWS) }
            }
        };
        if let EstimatorKind::Flare { m } = estimator {
            if m == 0 || m > p {
                return Err(CliError::Config(format!("estimator.m = {m} must lie in 1..={p}")).into());
            }
        }
        let lambda = self.posterior.lambda.unwrap_or(DEFAULT_LAMBDA);
        if !(lambda > 0.0) {
            return Err(CliError::Config(format!("posterior.lambda must be positive, got {lambda}")).into());
        }
        let filter_percentile = self.filter_percentile.unwrap_or(name.filter_percentile());
        if !(filter_percentile > 0.0 && filter_percentile <= 100.0) {
            return Err(CliError::Config(format!("filter_percentile {filter_percentile} outside (0, 100]")).into());
        }

        let e = &self.eval;
        reject_seed(&e.discriminator, "eval.discriminator")?;
        let mut discriminator: DiscriminatorConfig =
            merged(&DiscriminatorConfig::default(), &e.discriminator, "eval.discriminator")?;
        discriminator.seed = derive_seed(self.seed, stream::DISCRIMINATOR);
        let sketch: SketchInstanceSpec = merged(&SketchInstanceSpec::default(), &e.sketch.instance, "eval.sketch.instance")?;
        let fractions = self.ablate.fractions.clone().unwrap_or_else(|| DEFAULT_KEEP_FRACTIONS.to_vec());
        if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(CliError::Config(format!("keep fraction {f} outside (0, 1]")).into());
        }

        Ok(Resolved {
            dataset: name,
            generator,
            model,
            schedule_steps: steps,
            train,
            estimator,
            lambda,
            n_pairs: self.posterior.n_pairs.unwrap_or(DEFAULT_GGN_PAIRS),
            sampler: self.sampler.unwrap_or(SamplerKind::Ddpm),
            n_samples: self.n_samples.unwrap_or(2000),
            filter_percentile,
            eval: ResolvedEval {
                resamples: e.resamples.unwrap_or(DEFAULT_RESAMPLES),
                draws: e.draws.unwrap_or(128),
                thresholds: e.thresholds.clone().unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec()),
                paths: e.paths.unwrap_or(20),
                cross_term_lambda: e.cross_term_lambda.unwrap_or(CROSS_TERM_LAMBDA),
                trials: e.trials.unwrap_or(100),
                prop1_draws: e.prop1_draws.unwrap_or(4096),
                discriminator,
                sketch,
                m_grid: e.sketch.m_grid.clone().unwrap_or_else(|| DEFAULT_SKETCH_GRID.to_vec()),
                sketch_trials: e.sketch.trials.unwrap_or(50),
            },
            fractions,
            ablate_samples: self.ablate.n_samples.unwrap_or(100),
            seed: self.seed,
        })
    }
}

/// Every setting a command uses, after presets and overrides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub dataset: DatasetName,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub schedule_steps: usize,
    pub train: TrainConfig,
    pub estimator: EstimatorKind,
    pub lambda: f64,
    pub n_pairs: usize,
    pub sampler: SamplerKind,
    pub n_samples: usize,
    pub filter_percentile: f64,
    pub eval: ResolvedEval,
    pub fractions: Vec<f64>,
    pub ablate_samples: usize,
    pub seed: u64,
}

impl Resolved {
    pub fn sub_seed(&self, stream: u64) -> u64 {
        derive_seed(self.seed, stream)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedEval {
    pub resamples: usize,
    pub draws: usize,
    pub thresholds: Vec<f64>,
    pub paths: usize,
    pub cross_term_lambda: f64,
    pub trials: usize,
    pub prop1_draws: usize,
    pub discriminator: DiscriminatorConfig,
    pub sketch: SketchInstanceSpec,
    pub m_grid: Vec<usize>,
    pub sketch_trials: usize,
}

fn reject_seed(overrides: &Map<String, Value>, section: &str) -> anyhow::Result<()> {
    if overrides.contains_key("seed") {
        return Err(CliError::Config(format!("{section}.seed is derived from the top-level seed and cannot be set")).into());
    }
    Ok(())
}

/// Overlays `overrides` on the serialized `base`; unknown keys are rejected
/// by the target type.
fn merged<T: Serialize + DeserializeOwned>(base: &T, overrides: &Map<String, Value>, section: &str) -> anyhow::Result<T> {
    let mut value = serde_json::to_value(base)?;
    let object = value.as_object_mut().expect("config sections serialize to objects");
    for (k, v) in overrides {
        if !object.contains_key(k) {
            return Err(CliError::Config(format!("unknown key {section}.{k}")).into());
        }
        object.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{section}: {e}")).into())
}
