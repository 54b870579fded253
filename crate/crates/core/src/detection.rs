//! Per-slice 2D detections: merging into a 3D volume of interest, IoU and
//! average precision.
//!
//! Extents are continuous (`max − min` per axis, no +1 pixel convention).

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::volume::Box3D;

/// Axis-aligned box on one axial slice.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Box2D {
    pub slice_z: i64,
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub confidence: Option<f64>,
}

impl Box2D {
    pub fn new(slice_z: i64, min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        if !(min[0] <= max[0] && min[1] <= max[1]) {
            return Err(Error::Invalid(format!("box min {min:?} exceeds max {max:?} on slice {slice_z}")));
        }
        Ok(Self {
            slice_z,
            min,
            max,
            confidence: None,
        })
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }
}

/// Union of all 2D extents spanning the covered slices. Fractional corners
/// are widened outward to whole voxels.
pub fn merge_slices(boxes: &[Box2D]) -> Result<Box3D> {
    let first = boxes
        .first()
        .ok_or_else(|| Error::Invalid("cannot merge an empty list of slice boxes".into()))?;
    let mut lo = [first.min[0], first.min[1], first.slice_z as f64];
    let mut hi = [first.max[0], first.max[1], first.slice_z as f64];
    for b in &boxes[1..] {
        let z = b.slice_z as f64;
        for (a, (l, h)) in [(b.min[0], b.max[0]), (b.min[1], b.max[1]), (z, z)].into_iter().enumerate() {
            lo[a] = lo[a].min(l);
            hi[a] = hi[a].max(h);
        }
    }
    Box3D::new(
        [libm::floor(lo[0]) as i64, libm::floor(lo[1]) as i64, lo[2] as i64],
        [libm::ceil(hi[0]) as i64, libm::ceil(hi[1]) as i64, hi[2] as i64],
    )
}

fn overlap(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
    (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
}

fn ratio(inter: f64, union: f64, same: bool) -> f64 {
    if union > 0.0 {
        inter / union
    } else if same {
        // Both boxes are degenerate; only coincident ones overlap.
        1.0
    } else {
        0.0
    }
}

/// Intersection over union of two slice boxes; boxes on different slices
/// do not overlap.
pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    if a.slice_z != b.slice_z {
        return 0.0;
    }
    let inter = overlap(a.min[0], a.max[0], b.min[0], b.max[0]) * overlap(a.min[1], a.max[1], b.min[1], b.max[1]);
    let union = a.area() + b.area() - inter;
    ratio(inter, union, a.min == b.min && a.max == b.max)
}

/// Intersection over union of two 3D boxes using continuous extents.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let ext = |bx: &Box3D, ax: usize| (bx.max_voxel[ax] - bx.min_voxel[ax]) as f64;
    let mut inter = 1.0;
    for ax in 0..3 {
        inter *= overlap(
            a.min_voxel[ax] as f64,
            a.max_voxel[ax] as f64,
            b.min_voxel[ax] as f64,
            b.max_voxel[ax] as f64,
        );
    }
    let va = ext(a, 0) * ext(a, 1) * ext(a, 2);
    let vb = ext(b, 0) * ext(b, 1) * ext(b, 2);
    ratio(inter, va + vb - inter, a == b)
}

/// Average precision of scored detections against ground truth.
///
/// Predictions are visited by descending confidence (input order breaks
/// ties); each claims the unmatched truth with the highest IoU at or above
/// `iou_threshold`. The precision–recall curve uses all-point
/// interpolation: AP = Σ (rᵢ − rᵢ₋₁) · max_{j ≥ i} pⱼ.
pub fn average_precision(preds: &[Box2D], truths: &[Box2D], iou_threshold: f64) -> Result<f64> {
    if truths.is_empty() {
        return Err(Error::Invalid("average precision is undefined without ground-truth boxes".into()));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    let conf = |i: usize| preds[i].confidence.unwrap_or(0.0);
    order.sort_by(|&a, &b| conf(b).partial_cmp(&conf(a)).unwrap_or(core::cmp::Ordering::Equal));

    let mut matched = alloc::vec![false; truths.len()];
    let mut tp = 0usize;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(preds.len()); // (recall, precision)
    for (rank, &p) in order.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths.iter().enumerate() {
            if matched[t] {
                continue;
            }
            let o = iou_2d(&preds[p], truth);
            if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((t, o));
            }
        }
        if let Some((t, _)) = best {
            matched[t] = true;
            tp += 1;
        }
        points.push((tp as f64 / truths.len() as f64, tp as f64 / (rank + 1) as f64));
    }

    // Sweep from the lowest-confidence end so the running max is the
    // interpolated precision.
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    for i in (0..points.len()).rev() {
        envelope = envelope.max(points[i].1);
        let prev_recall = if i == 0 { 0.0 } else { points[i - 1].0 };
        ap += (points[i].0 - prev_recall) * envelope;
    }
    Ok(ap)
}
