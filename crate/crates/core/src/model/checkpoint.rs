//! Single-file model checkpoints.
//!
//! Layout: the 8-byte magic `MDLCKPT1`, a little-endian `u32` header length,
//! a JSON header, then every tensor's values as little-endian `f32` in header
//! order. Tensor names are stable, so two checkpoints of the same
//! architecture can be compared tensor by tensor.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::resnet::{MdlModel, TaskId};
use super::width::WidthConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MDLCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub width: WidthConfig,
    pub image_size: usize,
    pub head_sizes: BTreeMap<TaskId, usize>,
    pub step: u64,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: MdlModel<f32>,
}

pub fn encode(model: &MdlModel<f32>, step: u64, seed: u64) -> Vec<u8> {
    let params = model.params();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        width: model.width,
        image_size: model.image_size,
        head_sizes: model.head_sizes(),
        step,
        seed,
        tensors: params.iter().map(|(n, p)| TensorEntry { name: n.clone(), shape: p.shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let total: usize = params.iter().map(|(_, p)| p.len()).sum();
    let mut out = Vec::with_capacity(12 + json.len() + 4 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in params {
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| Error::format("checkpoint", "truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {}", header.format_version)));
    }
    let mut model = MdlModel::<f32>::new(header.width, &header.head_sizes, header.image_size, 0)?;
    let mut offset = 12 + hlen;
    {
        let params = model.params_mut();
        if params.len() != header.tensors.len() {
            return Err(Error::format("checkpoint", "tensor count does not match architecture"));
        }
        for ((name, p), entry) in params.into_iter().zip(&header.tensors) {
            if name != entry.name || p.shape != entry.shape {
                return Err(Error::format("checkpoint", format!("unexpected tensor {}", entry.name)));
            }
            let len = p.len() * 4;
            let raw = bytes
                .get(offset..offset + len)
                .ok_or_else(|| Error::format("checkpoint", "truncated tensor data"))?;
            for (v, chunk) in p.value.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            offset += len;
        }
    }
    if offset != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Ok(Checkpoint { header, model })
}

/// Writes via a temporary file and rename so readers never see a partial file.
pub fn save(path: &Path, model: &MdlModel<f32>, step: u64, seed: u64) -> Result<()> {
    write_atomic(path, &encode(model, step, seed))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
