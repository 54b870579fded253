//! Volume files: a JSON descriptor next to a raw little-endian `f32`
//! payload.
//!
//! ```json
//! {"dims": [32, 32, 32], "spacing_mm": [1.0, 1.0, 1.0], "dtype": "f32le", "data_file": "subj_000.raw"}
//! ```
//!
//! `data_file` is relative to the descriptor. Values are stored x fastest,
//! then y, then z.

use std::fs;
use std::path::Path;

use evidnet_core::Volume3D;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeDescriptor {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    pub data_file: String,
}

/// Writes `volume` to `descriptor` plus a `.raw` payload with the same stem.
pub fn write_volume(descriptor: &Path, volume: &Volume3D) -> Result<()> {
    let stem = descriptor
        .file_stem()
        .ok_or_else(|| AppError::invalid(descriptor, "volume path has no file name"))?;
    let data_file = format!("{}.raw", stem.to_string_lossy());
    let header = VolumeDescriptor {
        dims: volume.dims(),
        spacing_mm: volume.spacing_mm(),
        dtype: DTYPE.into(),
        data_file: data_file.clone(),
    };
    let mut bytes = Vec::with_capacity(volume.values().len() * 4);
    for v in volume.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let raw = descriptor.with_file_name(data_file);
    fs::write(&raw, bytes).map_err(|e| AppError::io(&raw, e))?;
    write_json(descriptor, &header)
}

pub fn read_volume(descriptor: &Path) -> Result<Volume3D> {
    let text = fs::read_to_string(descriptor).map_err(|e| AppError::io(descriptor, e))?;
    let header: VolumeDescriptor = serde_json::from_str(&text).map_err(|e| AppError::invalid(descriptor, e))?;
    if header.dtype != DTYPE {
        return Err(AppError::invalid(
            descriptor,
            format!("unsupported dtype '{}', expected '{DTYPE}'", header.dtype),
        ));
    }
    let raw = descriptor.with_file_name(&header.data_file);
    let bytes = fs::read(&raw).map_err(|e| AppError::io(&raw, e))?;
    let expected = header.dims.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(AppError::invalid(
            &raw,
            format!("payload has {} bytes, dims {:?} need {expected}", bytes.len(), header.dims),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume3D::new(header.dims, header.spacing_mm, values).map_err(|e| AppError::from(e).context(descriptor.display()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| AppError::invalid(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}
