//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `FSEGCKPT` |
//! | 4 | format version (u32, currently 1) |
//! | 8 | header length `L` (u64) |
//! | L | UTF-8 JSON header: model config, epoch, step, seed, free-form `meta`, and the tensor table (name, kind, shape) in storage order |
//! | … | tensor data as f32, concatenated in table order |
//!
//! Readers ignore unknown header keys, so fields can be added without a version
//! bump. Augmentation and batch-order randomness is derived from `seed` and the
//! epoch/step counters, which is all the RNG state a run has.

use std::io::{Read, Write};
use std::path::Path;

use fractoseg_nn::{ParamKind, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, SegModel};
use crate::SegError;

pub const MAGIC: &[u8; 8] = b"FSEGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: ParamKind,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    epoch: usize,
    step: u64,
    seed: u64,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SegModel,
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: SegModel, epoch: usize, step: u64, seed: u64) -> Self {
        Checkpoint {
            model,
            epoch,
            step,
            seed,
            meta: serde_json::Value::Null,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), SegError> {
        let params = &self.model.params;
        let header = Header {
            model: self.model.config.clone(),
            epoch: self.epoch,
            step: self.step,
            seed: self.seed,
            meta: self.meta.clone(),
            tensors: params
                .ids()
                .map(|id| TensorEntry {
                    name: params.name(id).to_string(),
                    kind: params.kind(id),
                    shape: params.get(id).shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for id in params.ids() {
            let bytes: Vec<u8> = params.get(id).data.iter().flat_map(|v| v.to_le_bytes()).collect();
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Checkpoint, SegError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SegError::Checkpoint("not a checkpoint file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(SegError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let mut model = SegModel::new(header.model.clone(), 0)?;
        let mut seen = 0;
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            model
                .params
                .set_by_name(&entry.name, Tensor::new(entry.shape.clone(), data))
                .map_err(|e| SegError::Checkpoint(e.to_string()))?;
            seen += 1;
        }
        if seen != model.params.len() {
            return Err(SegError::Checkpoint(format!(
                "checkpoint holds {seen} tensors, model has {}",
                model.params.len()
            )));
        }
        Ok(Checkpoint {
            model,
            epoch: header.epoch,
            step: header.step,
            seed: header.seed,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SegError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, SegError> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(SegError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} not found", path.display()),
            )));
        }
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Reads only the weights of a checkpoint, for encoder initialization.
pub fn load_params(path: impl AsRef<Path>) -> Result<ParamStore, SegError> {
    Ok(Checkpoint::load(path)?.model.params)
}
