//! Checkpoint container.
//!
//! Binary layout: magic "MQW1", version u32 LE, canonical-JSON metadata
//! (u64 LE byte length + UTF-8), then named tensors until EOF. Each tensor
//! record is: name (u64 LE length + UTF-8), rank (u64 LE), dims (rank x
//! u64 LE), data (32-bit LE floats, row-major). Serialization is fully
//! deterministic, so save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::ParamStore;
use crate::training::finetune::HeadConfig;

pub const MAGIC: &[u8; 4] = b"MQW1";
pub const VERSION: u32 = 1;

/// Metadata stored as canonical JSON inside the container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub head: Option<HeadConfig>,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Epochs completed so far.
    pub epoch: u64,
    /// Base seed of the training run (all random streams derive from it).
    pub seed: u64,
    /// State of the master random stream at save time.
    pub rng_state: [u64; 4],
}

/// In-memory checkpoint: metadata plus every named tensor (model weights,
/// optional head, optimizer moments).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    /// Snapshot a model (and optional extra tensors such as optimizer state).
    pub fn from_model(model: &Model<f32>, meta: CheckpointMeta) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, p) in model.params.iter() {
            tensors.insert(name.to_string(), (p.shape.clone(), p.data.clone()));
        }
        Checkpoint { meta, tensors }
    }

    pub fn insert_tensors(&mut self, extra: BTreeMap<String, (Vec<usize>, Vec<f32>)>) {
        self.tensors.extend(extra);
    }

    /// Rebuild the model: every tensor except optimizer state ("opt.*")
    /// becomes a parameter (head tensors included when present).
    pub fn to_model(&self) -> Result<Model<f32>> {
        self.meta.model.validate()?;
        let mut params = ParamStore::new();
        for (name, (shape, data)) in &self.tensors {
            if name.starts_with("opt.") {
                continue;
            }
            params.insert(name.clone(), shape.clone(), data.clone());
        }
        Ok(Model { config: self.meta.model.clone(), params })
    }

    /// Optimizer-state tensors ("opt.*").
    pub fn optimizer_tensors(&self) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with("opt."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (name, (shape, data)) in &self.tensors {
            let numel: usize = shape.iter().product();
            if numel != data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' has {} values but shape {:?}",
                    name,
                    data.len(),
                    shape
                )));
            }
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {:?}, not a checkpoint container", magic)));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported container version {}", version)));
        }
        let meta_len = r.take_u64()? as usize;
        let meta_bytes = r.take(meta_len)?;
        let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)?;
        let mut tensors = BTreeMap::new();
        while !r.done() {
            let name_len = r.take_u64()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {}", e)))?;
            let rank = r.take_u64()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.take_u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let mut data = Vec::with_capacity(numel);
            for chunk in raw.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
            }
            tensors.insert(name, (shape, data));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated container: wanted {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
