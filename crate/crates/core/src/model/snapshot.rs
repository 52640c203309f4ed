//! Flat weight snapshots: magic, `u32` LE header length, JSON header with the
//! config and tensor lengths, then every tensor as little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{ApceError, Result};

const MAGIC: &[u8; 8] = b"APCEWTS1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

impl Model {
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let tensors = self.weights().tensors();
        let header = Header {
            config: *self.config(),
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    len: t.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| ApceError::invalid(e.to_string()))?;
        let mut buf = Vec::with_capacity(12 + json.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| ApceError::io(path, e))?;
        f.write_all(&buf).map_err(|e| ApceError::io(path, e))
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| ApceError::io(path, e))?;
        let bad = |msg: &str| ApceError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: msg.to_string(),
        };
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a weight snapshot"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let mut model = Model::new(ModelConfig {
            vocab_size: 1,
            ..header.config
        })?;
        let mut weights = model.weights().clone();
        weights.embed = vec![0.0; header.config.vocab_size * header.config.d_model];
        let slots = weights.tensors_mut();
        if slots.len() != header.tensors.len() {
            return Err(bad("tensor count does not match the config"));
        }
        let mut data = &bytes[12 + hlen..];
        for (slot, entry) in slots.into_iter().zip(&header.tensors) {
            if slot.len() != entry.len {
                return Err(bad(&format!("tensor {} has the wrong length", entry.name)));
            }
            let n = entry.len * 4;
            let raw = data.get(..n).ok_or_else(|| bad("truncated tensor data"))?;
            for (dst, src) in slot.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(src.try_into().unwrap());
            }
            data = &data[n..];
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        model = Model::from_weights(header.config, weights)?;
        Ok(model)
    }
}
