//! Binary checkpoint container.
//!
//! Layout: the bytes `MPSTN`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every tensor's
//! values as little-endian `f64` in directory order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::folding::Normalizer;
use crate::model::ModelConfig;
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 5] = b"MPSTN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint header is invalid: {0}")]
    Header(String),
    #[error("tensor `{name}`: {reason}")]
    Tensor { name: String, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// 1-based epoch the parameters come from; 0 means untrained.
    pub epoch: usize,
    /// Absent for untrained parameters.
    pub val_mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub params: ParamSet,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    normalizer: Normalizer,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let tensors = self
            .params
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 8 * t.numel() as u64;
                e
            })
            .collect();
        let header = Header {
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(17 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(if bytes.len() < MAGIC.len() {
                CheckpointError::Truncated("file shorter than the magic bytes".into())
            } else {
                CheckpointError::BadMagic
            });
        }
        let fixed = MAGIC.len() + 4 + 8;
        if bytes.len() < fixed {
            return Err(CheckpointError::Truncated("incomplete preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let header_len = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let header_end = (fixed as u64)
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| CheckpointError::Truncated(format!("header of {header_len} bytes runs past end of file")))?
            as usize;
        let header: Header =
            serde_json::from_slice(&bytes[fixed..header_end]).map_err(|e| CheckpointError::Header(e.to_string()))?;
        header
            .config
            .validate()
            .map_err(|e| CheckpointError::Header(e.to_string()))?;

        let payload = &bytes[header_end..];
        let mut params = ParamSet::new();
        let mut expected_offset = 0u64;
        for entry in &header.tensors {
            let bad = |reason: String| CheckpointError::Tensor {
                name: entry.name.clone(),
                reason,
            };
            if entry.offset != expected_offset {
                return Err(bad(format!("offset {} but {} expected", entry.offset, expected_offset)));
            }
            let numel = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad(format!("shape {:?} overflows", entry.shape)))?;
            let start = entry.offset as usize;
            let end = numel
                .checked_mul(8)
                .and_then(|n| n.checked_add(start))
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| {
                    CheckpointError::Truncated(format!("payload of tensor `{}` is incomplete", entry.name))
                })?;
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(entry.shape.clone(), data).map_err(|e| bad(e.to_string()))?;
            if params.contains(&entry.name) {
                return Err(bad("appears twice".into()));
            }
            params.insert(entry.name.clone(), tensor);
            expected_offset = end as u64;
        }
        if expected_offset != payload.len() as u64 {
            return Err(CheckpointError::Header(format!(
                "{} trailing bytes after the last tensor",
                payload.len() as u64 - expected_offset
            )));
        }
        if let Err(e) = header.config.check_params(&params) {
            return Err(CheckpointError::Header(e.to_string()));
        }
        if header.normalizer.station_count() != header.config.stations {
            return Err(CheckpointError::Header(format!(
                "normalizer covers {} stations but the model has {}",
                header.normalizer.station_count(),
                header.config.stations
            )));
        }
        Ok(Self {
            config: header.config,
            normalizer: header.normalizer,
            params,
            meta: header.meta,
        })
    }

    /// Writes via a temporary sibling and a rename so readers never see a
    /// half-written file.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        crate::io::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::load(path)
}
