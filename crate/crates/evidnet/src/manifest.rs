//! Cohort manifests in JSON Lines: one object per line with `id`, `label`,
//! `volume_path` and optionally `boxes_path`. Paths are relative to the
//! manifest's directory. Blank lines are ignored.
//!
//! ```text
//! {"id":"subj_000","label":2,"volume_path":"volumes/subj_000.json","boxes_path":"boxes/subj_000.csv"}
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use evidnet_core::data::{validate_records, SubjectRecord};
use evidnet_core::NUM_CLASSES;

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory that relative paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<SubjectRecord>,
}

impl Manifest {
    pub fn volume_path(&self, record: &SubjectRecord) -> PathBuf {
        self.root.join(&record.volume_path)
    }

    pub fn boxes_path(&self, record: &SubjectRecord) -> Option<PathBuf> {
        record.boxes_path.as_ref().map(|p| self.root.join(p))
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SubjectRecord =
            serde_json::from_str(line).map_err(|e| AppError::invalid(path, format!("line {}: {e}", i + 1)))?;
        records.push(record);
    }
    validate_records(&records, NUM_CLASSES).map_err(|e| AppError::from(e).context(path.display()))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest { root, records })
}

pub fn write_manifest(path: &Path, records: &[SubjectRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| AppError::invalid(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    f.write_all(&out).map_err(|e| AppError::io(path, e))
}
