//! Model checkpoints.
//!
//! Layout: the 8-byte magic `EVNCKPT1`, a little-endian `u32` header
//! length, a JSON header, then three payload sections of little-endian
//! `f32` (parameters, Adam first moments, Adam second moments). Each
//! section holds every tensor in header order; a tensor's `offset` counts
//! elements from the start of its section.

use std::fs;
use std::path::Path;

use evidnet_core::network::{ModelState, NetworkConfig, OptimizerConfig, Tensor};
use evidnet_core::ClassWeights;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 8] = b"EVNCKPT1";

const SECTIONS: [&str; 3] = ["params", "first_moment", "second_moment"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub step: u64,
    /// Training-split class counts the loss weights were derived from.
    pub class_counts: Vec<usize>,
    pub class_weights: Vec<f64>,
    pub sections: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

/// A trained model with the settings it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState<f32>,
    pub optimizer: OptimizerConfig,
    pub class_counts: Vec<usize>,
}

impl Checkpoint {
    pub fn class_weights(&self) -> Result<ClassWeights> {
        Ok(ClassWeights::from_counts(&self.class_counts)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let tensors = self
            .state
            .params
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += t.data.len();
                e
            })
            .collect();
        let header = CheckpointHeader {
            network: self.state.config,
            optimizer: self.optimizer,
            seed: self.state.seed,
            step: self.state.step,
            class_counts: self.class_counts.clone(),
            class_weights: self.class_weights()?.as_slice().to_vec(),
            sections: SECTIONS.iter().map(|s| s.to_string()).collect(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| AppError::Validation(e.to_string()))?;
        let mut out = Vec::with_capacity(12 + json.len() + offset * 12);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let sections: [Vec<&[f32]>; 3] = [
            self.state.params.iter().map(|t| t.data.as_slice()).collect(),
            self.state.first_moment.iter().map(Vec::as_slice).collect(),
            self.state.second_moment.iter().map(Vec::as_slice).collect(),
        ];
        for section in sections {
            for v in section.into_iter().flatten() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err("not an evidnet checkpoint (bad magic)".into());
        }
        let header_len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let json = bytes.get(12..12 + header_len).ok_or("truncated checkpoint header")?;
        let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| format!("checkpoint header: {e}"))?;
        if header.sections != SECTIONS {
            return Err(format!("unexpected payload sections {:?}", header.sections));
        }
        let payload = &bytes[12 + header_len..];
        let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if payload.len() != total * 4 * SECTIONS.len() {
            return Err(format!(
                "payload has {} bytes, header describes {} values per section",
                payload.len(),
                total
            ));
        }
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut sections = floats.chunks_exact(total.max(1));
        let mut next = |header: &CheckpointHeader| -> std::result::Result<Vec<Vec<f32>>, String> {
            let section = if total == 0 { &[][..] } else { sections.next().ok_or("missing section")? };
            header
                .tensors
                .iter()
                .map(|t| {
                    let len: usize = t.shape.iter().product();
                    section
                        .get(t.offset..t.offset + len)
                        .map(<[f32]>::to_vec)
                        .ok_or_else(|| format!("tensor '{}' lies outside its section", t.name))
                })
                .collect()
        };
        let params = next(&header)?;
        let first = next(&header)?;
        let second = next(&header)?;
        let params = header
            .tensors
            .iter()
            .zip(params)
            .map(|(t, data)| Tensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data,
            })
            .collect();
        let state = ModelState::from_parts(header.network, header.seed, header.step, params, first, second)
            .map_err(|e| e.to_string())?;
        let ckpt = Checkpoint {
            state,
            optimizer: header.optimizer,
            class_counts: header.class_counts,
        };
        let weights = ckpt.class_weights().map_err(|e| e.to_string())?;
        if weights.as_slice() != header.class_weights.as_slice() {
            return Err("stored class weights disagree with the stored class counts".into());
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|m| AppError::invalid(path, m))
}
