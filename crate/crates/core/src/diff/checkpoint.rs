//! Checkpoint files: one line of UTF-8 JSON (starting with the `"magic":"NVE1"`
//! field) terminated by `\n`, followed by the raw little-endian `f64` blobs of
//! every parameter in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::params::ParamStore;

pub const CHECKPOINT_MAGIC: &str = "NVE1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob region.
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub magic: String,
    pub config: serde_json::Value,
    pub manifest: Vec<ManifestEntry>,
}

pub fn encode(config: &serde_json::Value, params: &ParamStore) -> Result<Vec<u8>> {
    let mut manifest = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for p in params.iter() {
        manifest.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: "f64".into(),
            offset,
            trainable: p.trainable,
        });
        offset += 8 * p.value.len() as u64;
    }
    let header = CheckpointHeader { magic: CHECKPOINT_MAGIC.into(), config: config.clone(), manifest };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.reserve(offset as usize);
    for p in params.iter() {
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<(serde_json::Value, ParamStore)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(origin, "missing header terminator"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::format(origin, format!("bad header: {e}")))?;
    if header.magic != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, format!("bad magic {:?}", header.magic)));
    }
    let blobs = &bytes[split + 1..];
    let mut store = ParamStore::new();
    for entry in header.manifest {
        if entry.dtype != "f64" {
            return Err(Error::format(origin, format!("unsupported dtype {}", entry.dtype)));
        }
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 8 * n;
        if end > blobs.len() {
            return Err(Error::format(origin, format!("{} runs past end of file", entry.name)));
        }
        let data = blobs[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(entry.name, Tensor::new(entry.shape, data)?, entry.trainable)?;
    }
    Ok((header.config, store))
}

pub fn save(path: &Path, config: &serde_json::Value, params: &ParamStore) -> Result<()> {
    let bytes = encode(config, params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(serde_json::Value, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
