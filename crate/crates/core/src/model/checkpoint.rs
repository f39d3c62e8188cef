//! Checkpoint files.
//!
//! ```text
//! "PSCK"         4 bytes magic
//! version        u8 (= 1)
//! header length  u32 little-endian
//! header         UTF-8 JSON (see `CheckpointHeader`)
//! payload        little-endian f32 tensors at the byte offsets listed in the header
//! ```
//!
//! The header carries the full model config, so a model can be rebuilt from
//! the file alone. Saving the same model twice yields identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::LayerSpec;

pub const MAGIC: &[u8; 4] = b"PSCK";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Byte offset from the start of the payload.
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub input_dims: [(usize, usize); 3],
    pub stack_layers: Vec<Vec<LayerSpec>>,
    pub head_layers: Vec<LayerSpec>,
    pub tensors: Vec<TensorEntry>,
    /// Caller-defined metadata (normalisation, label scaling, epoch, ...).
    pub meta: serde_json::Value,
}

pub fn encode(model: &Model<f32>, meta: serde_json::Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, data: &[f32]| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            offset: payload.len(),
            shape,
        });
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for p in model.params() {
        push(&p.name, p.value.shape().to_vec(), p.value.data());
    }
    for (name, buf) in model.buffers() {
        push(&name, vec![buf.len()], buf);
    }
    let header = CheckpointHeader {
        model: model.config().clone(),
        input_dims: model.input_dims(),
        stack_layers: model.stacks().iter().map(|s| s.specs.clone()).collect(),
        head_layers: model.head().specs.clone(),
        tensors,
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(9 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing PSCK magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", bytes[4])));
    }
    let len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    if bytes.len() < 9 + len {
        return Err(Error::Corruption("checkpoint header truncated".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[9..9 + len])?;
    Ok((header, &bytes[9 + len..]))
}

/// Rebuilds the architecture from the header and fills every tensor.
pub fn decode(bytes: &[u8]) -> Result<(Model<f32>, serde_json::Value)> {
    let (header, payload) = read_header(bytes)?;
    let mut model = Model::<f32>::new(header.model.clone(), header.input_dims)?;
    let lookup = |name: &str, len: usize| -> Result<Vec<f32>> {
        let e = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Corruption(format!("checkpoint lacks tensor `{name}`")))?;
        let n: usize = e.shape.iter().product();
        if n != len {
            return Err(Error::Corruption(format!(
                "tensor `{name}` has {n} values, model expects {len}"
            )));
        }
        let raw = payload
            .get(e.offset..e.offset + 4 * n)
            .ok_or_else(|| Error::Corruption(format!("tensor `{name}` runs past the payload")))?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };
    for p in model.params_mut() {
        let data = lookup(&p.name, p.len())?;
        p.value.data_mut().copy_from_slice(&data);
    }
    for (name, buf) in model.buffers_mut() {
        let data = lookup(&name, buf.len())?;
        buf.copy_from_slice(&data);
    }
    Ok((model, header.meta))
}

pub fn save(model: &Model<f32>, meta: serde_json::Value, path: &Path) -> Result<()> {
    let bytes = encode(model, meta)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model<f32>, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DropoutPlacement;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            channels_per_plane: [1, 2, 0],
            conv_layers_per_stack: 3,
            first_filters: 2,
            final_filters: 4,
            head_width: 3,
            dropout: DropoutPlacement::BetweenDense { p: 0.3 },
            seed: 9,
            ..ModelConfig::default()
        };
        let mut m = Model::<f32>::new(cfg, [(6, 6), (5, 7), (0, 0)]).unwrap();
        for (_, b) in m.buffers_mut() {
            b.iter_mut().enumerate().for_each(|(i, v)| *v = 0.5 + i as f32);
        }
        let meta = serde_json::json!({"epoch": 3});
        let bytes = encode(&m, meta.clone()).unwrap();
        let (back, meta_back) = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta_back, meta);
        assert_eq!(encode(&back, meta).unwrap(), bytes);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(decode(b"XXXX\x01\0\0\0\0"), Err(Error::Format(_))));
        let m = Model::<f32>::new(
            ModelConfig {
                channels_per_plane: [1, 0, 0],
                conv_layers_per_stack: 1,
                first_filters: 2,
                final_filters: 2,
                head_width: 2,
                ..ModelConfig::default()
            },
            [(4, 4), (0, 0), (0, 0)],
        )
        .unwrap();
        let bytes = encode(&m, serde_json::Value::Null).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 2]), Err(Error::Corruption(_))));
    }
}
