//! Binary checkpoint container.
//!
//! ```text
//! offset  size   field
//! 0       4      magic b"PCKP"
//! 4       1      version (1)
//! 5       8      manifest length m, u64 little-endian
//! 13      m      JSON manifest
//! 13+m    ..     RAW_TENSOR blobs back to back: params, adam.m, adam.v,
//!                then one mask per promoted id in promotion order
//! ```
//!
//! The manifest holds the model configuration, optimizer scalars, the sampling
//! RNG state, run progress, promotion history and all log records. The trainer
//! configuration is deliberately not stored: a checkpoint depends only on the
//! computation that produced it.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{DType, RawTensor};
use crate::nn::{Model, ModelConfig, OptimizerState};
use crate::pool::DatasetPool;
use crate::trainer::{CycleLog, EpochRecord, InitialLog, Progress, Promotion, TrainerState};
use crate::volume::Mask;

pub const MAGIC: [u8; 4] = *b"PCKP";
pub const VERSION: u8 = 1;
const FORMAT: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamScalars {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromotionHeader {
    cycle: u32,
    ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    model: ModelConfig,
    optimizer: AdamScalars,
    rng: ChaCha8Rng,
    progress: Progress,
    promotions: Vec<PromotionHeader>,
    initial_log: Option<InitialLog>,
    cycle_logs: Vec<CycleLog>,
    epoch_logs: Vec<EpochRecord>,
}

/// A decoded checkpoint, independent of any dataset.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
    pub progress: Progress,
    pub promotions: Vec<Promotion>,
    pub initial_log: Option<InitialLog>,
    pub cycle_logs: Vec<CycleLog>,
    pub epoch_logs: Vec<EpochRecord>,
}

impl Checkpoint {
    /// Rebuild the trainer state on top of a freshly loaded pool by replaying
    /// the recorded promotions.
    pub fn into_state(self, mut pool: DatasetPool) -> Result<TrainerState> {
        for p in &self.promotions {
            pool.promote(&p.ids, p.masks.clone(), p.cycle)?;
        }
        Ok(TrainerState {
            model: self.model,
            optimizer: self.optimizer,
            rng: self.rng,
            pool,
            progress: self.progress,
            promotions: self.promotions,
            initial_log: self.initial_log,
            cycle_logs: self.cycle_logs,
            epoch_logs: self.epoch_logs,
        })
    }
}

pub fn encode_checkpoint(state: &TrainerState) -> Vec<u8> {
    let opt = &state.optimizer;
    let manifest = Manifest {
        model: state.model.config().clone(),
        optimizer: AdamScalars {
            lr: opt.lr,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            step: opt.step,
        },
        rng: state.rng.clone(),
        progress: state.progress,
        promotions: state
            .promotions
            .iter()
            .map(|p| PromotionHeader {
                cycle: p.cycle,
                ids: p.ids.clone(),
            })
            .collect(),
        initial_log: state.initial_log.clone(),
        cycle_logs: state.cycle_logs.clone(),
        epoch_logs: state.epoch_logs.clone(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let n = state.model.num_params();
    for data in [state.model.params(), &opt.m, &opt.v] {
        RawTensor {
            dtype: DType::F64,
            shape: vec![n],
            data: data.to_vec(),
        }
        .encode_into(&mut out);
    }
    for mask in state.promotions.iter().flat_map(|p| &p.masks) {
        RawTensor {
            dtype: DType::F32,
            shape: mask.shape().to_vec(),
            data: mask.to_reals(),
        }
        .encode_into(&mut out);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn tensor(&mut self, what: &str) -> Result<RawTensor> {
        let (t, used) = RawTensor::decode_prefix(&self.bytes[self.pos..])
            .map_err(|e| Error::malformed(FORMAT, format!("{what}: {e}")))?;
        self.pos += used;
        Ok(t)
    }

    fn vector(&mut self, what: &str, len: usize) -> Result<Vec<f64>> {
        let t = self.tensor(what)?;
        if t.shape != [len] || t.dtype != DType::F64 {
            return Err(Error::malformed(
                FORMAT,
                format!("{what}: expected f64 [{len}], found {:?} {:?}", t.dtype, t.shape),
            ));
        }
        Ok(t.data)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 13 {
        return Err(Error::malformed(FORMAT, "shorter than the 13-byte header"));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::malformed(FORMAT, "bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::malformed(FORMAT, format!("unsupported version {}", bytes[4])));
    }
    let len = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(13))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::malformed(FORMAT, format!("manifest length {len} exceeds file")))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[13..end]).map_err(|e| Error::malformed(FORMAT, format!("manifest: {e}")))?;
    manifest
        .model
        .validate()
        .map_err(|e| Error::malformed(FORMAT, e.to_string()))?;
    let n = manifest.model.param_count().expect("validated");

    let mut r = Reader { bytes, pos: end };
    let params = r.vector("params", n)?;
    let m = r.vector("adam.m", n)?;
    let v = r.vector("adam.v", n)?;
    // Parameter count was checked against real bytes, so building the model is bounded.
    let mut model = Model::new(manifest.model, 0)?;
    model
        .set_params(params)
        .map_err(|e| Error::malformed(FORMAT, format!("params: {e}")))?;

    let mut promotions = Vec::with_capacity(manifest.promotions.len());
    for p in manifest.promotions {
        let mut masks = Vec::new();
        for id in &p.ids {
            let t = r.tensor(id)?;
            masks.push(Mask::from_reals(t.shape, &t.data).map_err(|e| Error::malformed(FORMAT, format!("{id}: {e}")))?);
        }
        promotions.push(Promotion {
            cycle: p.cycle,
            ids: p.ids,
            masks,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::malformed(
            FORMAT,
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    let a = manifest.optimizer;
    Ok(Checkpoint {
        model,
        optimizer: OptimizerState {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            m,
            v,
            step: a.step,
        },
        rng: manifest.rng,
        progress: manifest.progress,
        promotions,
        initial_log: manifest.initial_log,
        cycle_logs: manifest.cycle_logs,
        epoch_logs: manifest.epoch_logs,
    })
}

/// Write atomically: a sibling temporary file is renamed into place.
pub fn save_checkpoint(path: &Path, state: &TrainerState) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, encode_checkpoint(state)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
