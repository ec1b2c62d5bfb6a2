//! Binary model checkpoints.
//!
//! Layout, all integers little-endian u32:
//!
//! ```text
//! "CPRB" | version | header_len | header JSON | tensor_count
//! per tensor: name_len | name (UTF-8) | ndim | dims... | f32 LE data
//! ```
//!
//! The JSON header carries the model configuration and the epoch tag.

use std::fs;
use std::path::Path;

use curvprobe_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zoo::{ModelConfig, ZooModel};

pub const MAGIC: [u8; 4] = *b"CPRB";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub epoch: usize,
    pub toolkit_version: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ZooModel,
    pub epoch: usize,
}

pub fn encode(model: &ZooModel, epoch: usize) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        model: model.config().clone(),
        epoch,
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::CheckpointHeader(e.to_string()))?;
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((json.len() as u32).to_le_bytes());
    out.extend(json);
    let entries = model.params().entries();
    out.extend((entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend((e.name.len() as u32).to_le_bytes());
        out.extend(e.name.as_bytes());
        out.extend((e.tensor.ndim() as u32).to_le_bytes());
        for d in e.tensor.shape() {
            out.extend((*d as u32).to_le_bytes());
        }
        for v in e.tensor.data() {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::CheckpointContents(format!(
                "unexpected end of data at byte {} (needed {n} more)",
                self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r
        .take(4)
        .map_err(|_| Error::CheckpointHeader("file shorter than the magic bytes".into()))?
        .try_into()
        .unwrap();
    if magic != MAGIC {
        return Err(Error::CheckpointMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            supported: VERSION,
        });
    }
    let hlen = r.u32()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::CheckpointHeader(e.to_string()))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::CheckpointContents("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .ok_or_else(|| Error::CheckpointContents(format!("tensor '{name}' is too large")))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::CheckpointContents("size overflow".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::CheckpointContents(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let model = ZooModel::from_tensors(header.model, tensors)?;
    Ok(Checkpoint {
        model,
        epoch: header.epoch,
    })
}

pub fn save_checkpoint(model: &ZooModel, epoch: usize, path: &Path) -> Result<()> {
    let bytes = encode(model, epoch)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
