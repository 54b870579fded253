//! Delimited-text box files.
//!
//! Slice detections: header `slice_z,x_min,y_min,x_max,y_max` with an
//! optional trailing `confidence` column. Volumes of interest:
//! `id,x_min,y_min,z_min,x_max,y_max,z_max` in inclusive voxel indices.

use std::collections::BTreeMap;
use std::path::Path;

use evidnet_core::detection::Box2D;
use evidnet_core::Box3D;
use serde::{Deserialize, Serialize};

use crate::error::{csv_error, AppError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct SliceRow {
    slice_z: i64,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VoiRow {
    id: String,
    x_min: i64,
    y_min: i64,
    z_min: i64,
    x_max: i64,
    y_max: i64,
    z_max: i64,
}

const SLICE_HEADER: [&str; 5] = ["slice_z", "x_min", "y_min", "x_max", "y_max"];

pub fn read_slice_boxes(path: &Path) -> Result<Vec<Box2D>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let with_conf = names.len() == 6 && names[5] == "confidence";
    if names[..names.len().min(5)] != SLICE_HEADER || !(names.len() == 5 || with_conf) {
        return Err(AppError::invalid(
            path,
            format!("expected header {},[confidence], found {}", SLICE_HEADER.join(","), names.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<SliceRow>().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let b = Box2D::new(row.slice_z, [row.x_min, row.y_min], [row.x_max, row.y_max])
            .map_err(|e| AppError::invalid(path, format!("line {line}: {e}")))?;
        if [row.x_min, row.y_min, row.x_max, row.y_max].iter().any(|v| !v.is_finite()) {
            return Err(AppError::invalid(path, format!("line {line}: non-finite coordinate")));
        }
        out.push(match row.confidence {
            Some(c) if !(0.0..=1.0).contains(&c) => {
                return Err(AppError::invalid(path, format!("line {line}: confidence {c} outside [0, 1]")))
            }
            Some(c) => b.with_confidence(c),
            None => b,
        });
    }
    Ok(out)
}

/// Writes boxes, adding the confidence column when any box carries one.
pub fn write_slice_boxes(path: &Path, boxes: &[Box2D]) -> Result<()> {
    let with_conf = boxes.iter().any(|b| b.confidence.is_some());
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = SLICE_HEADER.to_vec();
    if with_conf {
        header.push("confidence");
    }
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for b in boxes {
        let mut rec = vec![
            b.slice_z.to_string(),
            b.min[0].to_string(),
            b.min[1].to_string(),
            b.max[0].to_string(),
            b.max[1].to_string(),
        ];
        if with_conf {
            rec.push(b.confidence.map(|c| c.to_string()).unwrap_or_default());
        }
        writer.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_vois(path: &Path) -> Result<BTreeMap<String, Box3D>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.deserialize::<VoiRow>().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let b = Box3D::new([row.x_min, row.y_min, row.z_min], [row.x_max, row.y_max, row.z_max])
            .map_err(|e| AppError::invalid(path, format!("line {}: {e}", i + 2)))?;
        if out.insert(row.id.clone(), b).is_some() {
            return Err(AppError::invalid(path, format!("duplicate subject id '{}'", row.id)));
        }
    }
    Ok(out)
}

pub fn write_vois<'a>(path: &Path, vois: impl IntoIterator<Item = (&'a str, &'a Box3D)>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (id, b) in vois {
        writer
            .serialize(VoiRow {
                id: id.to_string(),
                x_min: b.min_voxel[0],
                y_min: b.min_voxel[1],
                z_min: b.min_voxel[2],
                x_max: b.max_voxel[0],
                y_max: b.max_voxel[1],
                z_max: b.max_voxel[2],
            })
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| AppError::io(path, e))
}
