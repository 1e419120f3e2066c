//! `.vapsckpt` files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "VAPSCKPT"            8 bytes
//! version               u32
//! header length         u32
//! header                JSON (run config, vocabulary sizes, parameter
//!                       names/shapes/trainable flags, optimizer state meta)
//! parameter values      f64 per entry, in header order
//! Adam first moments    f64 per entry, in header order
//! Adam second moments   f64 per entry, in header order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Adam, AdamConfig, ParamStore, Tensor};

use super::config::RunConfig;
use super::model::VapsModel;

pub const MAGIC: &[u8; 8] = b"VAPSCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: RunConfig,
    n_attrs: usize,
    n_objs: usize,
    params: Vec<ParamMeta>,
    optimizer: OptimizerMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    config: AdamConfig,
    step: u64,
}

/// A model with the optimizer state needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: VapsModel,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn new(model: VapsModel, optimizer: Adam) -> Self {
        Self { model, optimizer }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step_count()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = &self.model.store;
        let header = Header {
            config: self.model.config.clone(),
            n_attrs: self.model.n_attrs,
            n_objs: self.model.n_objs,
            params: store
                .iter()
                .map(|(_, p)| ParamMeta {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    trainable: p.trainable,
                })
                .collect(),
            optimizer: OptimizerMeta {
                config: self.optimizer.config,
                step: self.optimizer.step_count(),
            },
        };
        let json = serde_json::to_vec(&header)?;
        let header_len = u32::try_from(json.len()).map_err(|_| Error::Shape("checkpoint header too large".into()))?;
        let (m, v) = self.optimizer.moments();
        if m.len() != store.len() || v.len() != store.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in store.iter() {
            out.extend_from_slice(&p.value.to_le_bytes());
        }
        for t in m.iter().chain(v) {
            out.extend_from_slice(&t.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a VAPS checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body_start = 16 + header_len;
        let json = bytes.get(16..body_start).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;

        let mut cursor = body_start;
        let mut read_tensor = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let end = cursor + 8 * n;
            let raw = bytes.get(cursor..end).ok_or_else(|| bad("truncated parameter data".into()))?;
            cursor = end;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Tensor::new(shape, data)
        };
        let mut store = ParamStore::new();
        for meta in &header.params {
            store.add(meta.name.clone(), read_tensor(&meta.shape)?, meta.trainable);
        }
        let mut moments = Vec::with_capacity(2 * header.params.len());
        for meta in header.params.iter().chain(&header.params) {
            moments.push(read_tensor(&meta.shape)?);
        }
        if cursor != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - cursor)));
        }
        let v = moments.split_off(header.params.len());
        let optimizer = Adam::from_state(header.optimizer.config, header.optimizer.step, moments, v);
        let model = VapsModel::attach(&header.config, header.n_attrs, header.n_objs, store)?;
        Ok(Self { model, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }
}
