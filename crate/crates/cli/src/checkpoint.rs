//! Binary checkpoints: `FLRE`, a little-endian `u32` version, a `u64` header
//! length, the JSON header, then the raw parameter block followed by the EMA
//! block, both as little-endian `f64`.

use std::path::Path;

use anyhow::Context as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flare_core::denoiser::{DenoiserModel, LayerEntry, ModelConfig, ParamVector};
use flare_core::diffusion::DiffusionSchedule;

use crate::config::ScheduleKind;
use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"FLRE";
pub const CHECKPOINT_VERSION: u32 = 1;
const BLOCKS: [&str; 2] = ["params", "ema"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleId {
    pub kind: ScheduleKind,
    pub steps: usize,
    /// SHA-256 over the kind, `T` and every `β_t`.
    pub hash: String,
}

impl ScheduleId {
    pub fn of(kind: ScheduleKind, schedule: &DiffusionSchedule) -> Self {
        let mut h = Sha256::new();
        h.update(match kind {
            ScheduleKind::Cosine => b"cosine",
        });
        h.update((schedule.steps() as u64).to_le_bytes());
        for t in 1..=schedule.steps() {
            h.update(schedule.beta(t).to_le_bytes());
        }
        Self { kind, steps: schedule.steps(), hash: hex::encode(h.finalize()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub layout: Vec<LayerEntry>,
    pub param_count: usize,
    pub seed: u64,
    pub schedule: ScheduleId,
    pub blocks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: DenoiserModel,
    /// The point estimate used downstream.
    pub ema: DenoiserModel,
}

impl Checkpoint {
    pub fn new(params: DenoiserModel, ema: DenoiserModel, seed: u64, schedule: ScheduleId) -> anyhow::Result<Self> {
        if params.config() != ema.config() || !params.params().same_layout(ema.params()) {
            return Err(CliError::Schema("EMA and raw parameters have different layouts".into()).into());
        }
        let header = CheckpointHeader {
            model: *params.config(),
            layout: params.params().layout().to_vec(),
            param_count: params.param_count(),
            seed,
            schedule,
            blocks: BLOCKS.iter().map(|s| s.to_string()).collect(),
        };
        Ok(Self { header, params, ema })
    }

    pub fn encode(&self) -> anyhow::Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let p = self.header.param_count;
        let mut out = Vec::with_capacity(16 + header.len() + 16 * p);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for model in [&self.params, &self.ema] {
            for v in model.params().values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> anyhow::Result<Self> {
        let schema = |msg: String| anyhow::Error::new(CliError::Schema(msg));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(schema("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(schema(format!("checkpoint version {version} is not supported")));
        }
        let header_len = usize::try_from(u64::from_le_bytes(bytes[8..16].try_into().unwrap()))?;
        let body = bytes.get(16..).unwrap_or_default();
        if header_len > body.len() {
            return Err(schema("truncated checkpoint header".into()));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&body[..header_len]).map_err(|e| schema(format!("checkpoint header: {e}")))?;
        let p = header.param_count;
        if header.blocks != BLOCKS || header.layout != header.model.layout() || p != header.model.param_count() {
            return Err(schema("checkpoint header is inconsistent with its architecture".into()));
        }
        let data = &body[header_len..];
        if data.len() != 16 * p {
            return Err(schema(format!("expected {} parameter bytes, found {}", 16 * p, data.len())));
        }
        let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut block = || -> anyhow::Result<DenoiserModel> {
            let v: Vec<f64> = values.by_ref().take(p).collect();
            Ok(DenoiserModel::from_params(header.model, ParamVector::new(v, header.layout.clone())?)?)
        };
        let params = block()?;
        let ema = block()?;
        Ok(Self { header, params, ema })
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.encode()?).with_context(|| format!("writing checkpoint {}", path.display()))
    }

    /// Refuses checkpoints trained under a different schedule.
    pub fn load(path: &Path, expected: &ScheduleId) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let ck = Self::decode(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))?;
        if &ck.header.schedule != expected {
            return Err(anyhow::Error::new(CliError::Schema(format!(
                "checkpoint schedule {:?} (T = {}) does not match the configured schedule (T = {})",
                ck.header.schedule.kind, ck.header.schedule.steps, expected.steps
            )))
            .context(format!("loading checkpoint {}", path.display())));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Checkpoint, DiffusionSchedule) {
        let cfg = ModelConfig { data_dim: 3, hidden: 5, n_blocks: 1, time_embed_dim: 4, total_steps: 10 };
        let schedule = DiffusionSchedule::cosine(10).unwrap();
        let a = DenoiserModel::init(cfg, 1).unwrap();
        let b = DenoiserModel::init(cfg, 2).unwrap();
        (Checkpoint::new(a, b, 7, ScheduleId::of(ScheduleKind::Cosine, &schedule)).unwrap(), schedule)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (ck, schedule) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.flre");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path, &ScheduleId::of(ScheduleKind::Cosine, &schedule)).unwrap();
        assert_eq!(back, ck);
        let bits = |m: &DenoiserModel| m.params().values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.ema), bits(&ck.ema));
        assert_eq!(&std::fs::read(&path).unwrap()[..4], b"FLRE");
    }

    #[test]
    fn mismatched_schedule_is_refused() {
        let (ck, _) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.flre");
        ck.save(&path).unwrap();
        let other = ScheduleId::of(ScheduleKind::Cosine, &DiffusionSchedule::cosine(12).unwrap());
        let err = Checkpoint::load(&path, &other).unwrap_err();
        assert!(err.chain().any(|c| matches!(c.downcast_ref::<CliError>(), Some(CliError::Schema(_)))), "{err:#}");
    }

    #[test]
    fn schedule_hash_tracks_the_betas() {
        let a = DiffusionSchedule::cosine(10).unwrap();
        let again = DiffusionSchedule::cosine(10).unwrap();
        assert_eq!(ScheduleId::of(ScheduleKind::Cosine, &a), ScheduleId::of(ScheduleKind::Cosine, &again));
        let betas: Vec<f64> = (1..=10).map(|t| a.beta(t) * 0.5).collect();
        let c = DiffusionSchedule::from_betas(betas).unwrap();
        assert_ne!(ScheduleId::of(ScheduleKind::Cosine, &a).hash, ScheduleId::of(ScheduleKind::Cosine, &c).hash);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (ck, _) = tiny();
        let bytes = ck.encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 9;
        assert!(Checkpoint::decode(&bad).is_err());
    }
}
