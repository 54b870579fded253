//! Preprocessing, cross-validation and inference over a manifest.

use std::collections::BTreeMap;

use evidnet_core::data::{derive_seed, stratified_kfold_indices};
use evidnet_core::metrics::PredictionRecord;
use evidnet_core::network::{train_with_progress, ModelState, NetworkConfig, OptimizerConfig, TrainingSample};
use evidnet_core::volume::{crop, resample_isotropic, window_normalize, DEFAULT_WINDOW_LEVEL, DEFAULT_WINDOW_WIDTH};
use evidnet_core::{Box3D, Volume3D, NUM_CLASSES};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{AppError, Result};
use crate::manifest::Manifest;
use crate::volume_io::read_volume;

/// Window, resample and crop settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub window_width: f64,
    pub window_level: f64,
    pub target_mm: f64,
    /// Edge of the cubic network input.
    pub side: usize,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            window_width: DEFAULT_WINDOW_WIDTH,
            window_level: DEFAULT_WINDOW_LEVEL,
            target_mm: 1.0,
            side: 32,
        }
    }
}

/// Windowing, isotropic resampling, then a crop of the VoI (or the whole
/// volume) centered in a `side`³ cube. `voi` is in source voxel indices.
pub fn prepare_volume(volume: &Volume3D, voi: Option<&Box3D>, p: &Preprocess) -> Result<Vec<f32>> {
    let windowed = window_normalize(volume, p.window_width, p.window_level)?;
    let resampled = resample_isotropic(&windowed, p.target_mm)?;
    let region = match voi {
        Some(b) => b.rescale(volume.spacing_mm(), p.target_mm),
        None => resampled.full_box(),
    };
    Ok(crop(&resampled, &region, p.side)?.into_values())
}

/// A subject ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSubject {
    pub id: String,
    pub label: usize,
    pub input: Vec<f32>,
}

/// Loads and preprocesses every manifest subject. With a VoI table, each
/// subject must have an entry.
pub fn prepare_cohort(
    manifest: &Manifest,
    vois: Option<&BTreeMap<String, Box3D>>,
    p: &Preprocess,
) -> Result<Vec<PreparedSubject>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let volume = read_volume(&manifest.volume_path(r))?;
            let voi = match vois {
                Some(table) => Some(table.get(&r.id).ok_or_else(|| {
                    AppError::Validation(format!("subject '{}' has no entry in the VoI table", r.id))
                })?),
                None => None,
            };
            let input = prepare_volume(&volume, voi, p).map_err(|e| e.context(format!("subject '{}'", r.id)))?;
            Ok(PreparedSubject {
                id: r.id.clone(),
                label: r.label,
                input,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossvalSettings {
    pub folds: usize,
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

/// Seed of the fold assignment.
pub fn split_seed(seed: u64) -> u64 {
    derive_seed(seed, 0)
}

/// Training seed of fold `fold`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, 1 + fold as u64)
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold_index: usize,
    pub predictions: Vec<PredictionRecord>,
    pub epoch_losses: Vec<f64>,
    pub checkpoint: Checkpoint,
}

/// Stratified k-fold training and validation. Each fold trains from
/// scratch with weights from its own training split. `progress` receives
/// (fold, epoch, mean loss).
pub fn crossval(
    subjects: &[PreparedSubject],
    settings: &CrossvalSettings,
    mut progress: impl FnMut(usize, usize, f64),
) -> Result<Vec<FoldResult>> {
    let labels: Vec<usize> = subjects.iter().map(|s| s.label).collect();
    let folds = stratified_kfold_indices(&labels, NUM_CLASSES, settings.folds, split_seed(settings.seed))?;
    folds
        .iter()
        .map(|fold| {
            let f = fold.fold_index;
            let samples: Vec<TrainingSample<f32>> = fold
                .train
                .iter()
                .map(|&i| TrainingSample {
                    input: &subjects[i].input,
                    label: subjects[i].label,
                })
                .collect();
            let outcome = train_with_progress(
                &samples,
                &settings.network,
                &settings.optimizer,
                fold_seed(settings.seed, f),
                |epoch, loss| progress(f, epoch, loss),
            )
            .map_err(|e| AppError::from(e).context(format!("fold {f}")))?;
            let validation: Vec<&PreparedSubject> = fold.validation.iter().map(|&i| &subjects[i]).collect();
            let predictions = predict(&outcome.state, validation).map_err(|e| e.context(format!("fold {f}")))?;
            Ok(FoldResult {
                fold_index: f,
                predictions,
                epoch_losses: outcome.epoch_losses,
                checkpoint: Checkpoint {
                    state: outcome.state,
                    optimizer: settings.optimizer,
                    class_counts: outcome.class_counts,
                },
            })
        })
        .collect()
}

pub fn predict<'a>(
    state: &ModelState<f32>,
    subjects: impl IntoIterator<Item = &'a PreparedSubject>,
) -> Result<Vec<PredictionRecord>> {
    subjects
        .into_iter()
        .map(|s| {
            let out = state
                .predict(&s.input)
                .map_err(|e| AppError::from(e).context(format!("subject '{}'", s.id)))?;
            Ok(PredictionRecord::new(s.id.clone(), s.label, &out))
        })
        .collect()
}
