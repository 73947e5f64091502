//! Checkpoint container.
//!
//! Layout: `b"SHMRCKPT"`, u32 little-endian container version, u64 header
//! length, a JSON header (format version, model config, training metadata,
//! tensor table) and the raw little-endian f64 parameter payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DualLatentAutoencoder, ModelConfig, ParamSlot};
use crate::losses::LossWeights;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SHMRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub seed: u64,
    pub variant: String,
    pub loss_weights: LossWeights,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    config: ModelConfig,
    meta: Option<TrainingMeta>,
    tensors: Vec<ParamSlot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: Option<TrainingMeta>,
    pub tensors: Vec<ParamSlot>,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &DualLatentAutoencoder, meta: Option<TrainingMeta>) -> Self {
        Self {
            config: model.config().clone(),
            meta,
            tensors: model.params().slots.clone(),
            data: model.params().data.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            dtype: "f64le".into(),
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors: self.tensors.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::signals::write_bytes_atomic(path, &self.to_bytes()?)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |why: String| Error::load(path, why);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let value: serde_json::Value =
            serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            None => return Err(bad("header has no format_version".into())),
            Some(v) if v != CHECKPOINT_VERSION as u64 => {
                return Err(Error::Version { found: v as u32, expected: CHECKPOINT_VERSION })
            }
            _ => {}
        }
        let header: Header = serde_json::from_value(value).map_err(|e| bad(format!("header: {e}")))?;
        if header.dtype != "f64le" {
            return Err(bad(format!("unsupported dtype {}", header.dtype)));
        }
        let total: usize = header.tensors.iter().map(ParamSlot::len).sum();
        let payload = &bytes[20 + hlen..];
        if payload.len() != 8 * total {
            return Err(bad(format!("payload holds {} bytes, tensors need {}", payload.len(), 8 * total)));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            config: header.config,
            meta: header.meta,
            tensors: header.tensors,
            data,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Rebuild the model. When `expected` is given the stored config must equal it.
    pub fn to_model(&self, expected: Option<&ModelConfig>) -> Result<DualLatentAutoencoder> {
        if let Some(cfg) = expected {
            if cfg != &self.config {
                return Err(Error::contract("checkpoint was saved with a different model config"));
            }
        }
        let mut model = DualLatentAutoencoder::new(self.config.clone())?;
        model.load_params(&self.tensors, self.data.clone())?;
        Ok(model)
    }

    /// SHA-256 over the raw parameter bytes.
    pub fn param_checksum(&self) -> String {
        param_checksum(&self.data)
    }
}

pub fn param_checksum(data: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in data {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
