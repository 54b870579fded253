//! CT-style preprocessing: window/level normalization, isotropic trilinear
//! resampling, and cropping a volume of interest into a fixed-size cube.
//!
//! Voxel `(x, y, z)` sits at physical position `(x·sx, y·sy, z·sz)` mm from a
//! shared origin. Values are stored z-outermost: `index = (z·ny + y)·nx + x`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Window width used for the renal parenchyma (HU).
pub const DEFAULT_WINDOW_WIDTH: f64 = 300.0;
/// Window level used for the renal parenchyma (HU).
pub const DEFAULT_WINDOW_LEVEL: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    values: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], values: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|d| *d == 0) {
            return Err(Error::Invalid(format!("volume dims {dims:?} must all be >= 1")));
        }
        if spacing_mm.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Invalid(format!("voxel spacing {spacing_mm:?} must be positive")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if values.len() != expected {
            return Err(Error::Shape {
                context: "volume buffer",
                expected,
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("volume value {i} is not finite")));
        }
        Ok(Self { dims, spacing_mm, values })
    }

    /// A volume filled with one value.
    pub fn filled(dims: [usize; 3], spacing_mm: [f64; 3], value: f32) -> Result<Self> {
        Self::new(dims, spacing_mm, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.index(x, y, z)]
    }

    /// The box covering every voxel.
    pub fn full_box(&self) -> Box3D {
        Box3D {
            min_voxel: [0, 0, 0],
            max_voxel: [self.dims[0] as i64 - 1, self.dims[1] as i64 - 1, self.dims[2] as i64 - 1],
        }
    }
}

/// Inclusive voxel-index box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Box3D {
    pub min_voxel: [i64; 3],
    pub max_voxel: [i64; 3],
}

impl Box3D {
    pub fn new(min_voxel: [i64; 3], max_voxel: [i64; 3]) -> Result<Self> {
        if (0..3).any(|a| min_voxel[a] > max_voxel[a]) {
            return Err(Error::Invalid(format!("box min {min_voxel:?} exceeds max {max_voxel:?}")));
        }
        Ok(Self { min_voxel, max_voxel })
    }

    pub fn contains(&self, other: &Box3D) -> bool {
        (0..3).all(|a| self.min_voxel[a] <= other.min_voxel[a] && other.max_voxel[a] <= self.max_voxel[a])
    }

    /// Intersection with the voxel grid `[0, dims)`, if non-empty.
    pub fn clip_to(&self, dims: [usize; 3]) -> Option<Box3D> {
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for a in 0..3 {
            lo[a] = self.min_voxel[a].max(0);
            hi[a] = self.max_voxel[a].min(dims[a] as i64 - 1);
            if lo[a] > hi[a] {
                return None;
            }
        }
        Some(Box3D {
            min_voxel: lo,
            max_voxel: hi,
        })
    }

    /// Maps a box given on a grid with `spacing_mm` onto the isotropic grid
    /// of `target_mm`, widening outward to whole voxels.
    pub fn rescale(&self, spacing_mm: [f64; 3], target_mm: f64) -> Box3D {
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for a in 0..3 {
            let f = spacing_mm[a] / target_mm;
            lo[a] = libm::floor(self.min_voxel[a] as f64 * f + 1e-9) as i64;
            hi[a] = libm::ceil(self.max_voxel[a] as f64 * f - 1e-9) as i64;
        }
        Box3D {
            min_voxel: lo,
            max_voxel: hi,
        }
    }
}

/// Clamps to `[level − width/2, level + width/2]` and maps that window
/// affinely onto `[0, 1]`.
pub fn window_normalize(volume: &Volume3D, width: f64, level: f64) -> Result<Volume3D> {
    if !(width > 0.0 && width.is_finite()) || !level.is_finite() {
        return Err(Error::Invalid(format!("window width {width} must be positive (level {level})")));
    }
    let lo = level - width / 2.0;
    let hi = level + width / 2.0;
    let values = volume
        .values
        .iter()
        .map(|v| ((f64::from(*v).clamp(lo, hi) - lo) / width) as f32)
        .collect();
    Ok(Volume3D {
        dims: volume.dims,
        spacing_mm: volume.spacing_mm,
        values,
    })
}

/// Output voxel count along one axis when resampling to `target_mm`.
pub fn resampled_len(len: usize, spacing_mm: f64, target_mm: f64) -> usize {
    libm::round((len - 1) as f64 * spacing_mm / target_mm) as usize + 1
}

/// Source interpolation taps along one axis: `(i0, i1, frac)` per output voxel.
fn axis_taps(len: usize, spacing_mm: f64, target_mm: f64) -> Vec<(usize, usize, f64)> {
    let out = resampled_len(len, spacing_mm, target_mm);
    let last = (len - 1) as f64;
    (0..out)
        .map(|i| {
            let pos = (i as f64 * target_mm / spacing_mm).clamp(0.0, last);
            let i0 = libm::floor(pos) as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Trilinear resampling onto an isotropic grid of `target_mm`.
///
/// Samples past the source extent clamp to the border voxel.
pub fn resample_isotropic(volume: &Volume3D, target_mm: f64) -> Result<Volume3D> {
    if !(target_mm > 0.0 && target_mm.is_finite()) {
        return Err(Error::Invalid(format!("target spacing {target_mm} must be positive")));
    }
    let [nx, ny, nz] = volume.dims;
    let [sx, sy, sz] = volume.spacing_mm;
    let tx = axis_taps(nx, sx, target_mm);
    let ty = axis_taps(ny, sy, target_mm);
    let tz = axis_taps(nz, sz, target_mm);
    let mut values = Vec::with_capacity(tx.len() * ty.len() * tz.len());
    let at = |x: usize, y: usize, z: usize| f64::from(volume.get(x, y, z));
    for &(z0, z1, fz) in &tz {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
                let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), fx);
                let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), fx);
                let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), fx);
                let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), fx);
                let c0 = lerp(c00, c10, fy);
                let c1 = lerp(c01, c11, fy);
                values.push(lerp(c0, c1, fz) as f32);
            }
        }
    }
    Volume3D::new([tx.len(), ty.len(), tz.len()], [target_mm; 3], values)
}

/// Extracts `bbox` (clipped to the volume) and centers it in a zero-filled
/// cube of `side` voxels, center-cropping axes longer than `side`.
pub fn crop(volume: &Volume3D, bbox: &Box3D, side: usize) -> Result<Volume3D> {
    if side == 0 {
        return Err(Error::Invalid("crop side must be at least 1".into()));
    }
    let clipped = bbox.clip_to(volume.dims).ok_or_else(|| {
        Error::Invalid(format!(
            "box {:?}..={:?} does not intersect volume of dims {:?}",
            bbox.min_voxel, bbox.max_voxel, volume.dims
        ))
    })?;
    // Per axis: first source voxel, first destination voxel, copied length.
    let mut src = [0usize; 3];
    let mut dst = [0usize; 3];
    let mut len = [0usize; 3];
    for a in 0..3 {
        let lo = clipped.min_voxel[a] as usize;
        let extent = (clipped.max_voxel[a] - clipped.min_voxel[a]) as usize + 1;
        if extent <= side {
            src[a] = lo;
            dst[a] = (side - extent) / 2;
            len[a] = extent;
        } else {
            src[a] = lo + (extent - side) / 2;
            dst[a] = 0;
            len[a] = side;
        }
    }
    let mut values = vec![0.0f32; side * side * side];
    for z in 0..len[2] {
        for y in 0..len[1] {
            let s = volume.index(src[0], src[1] + y, src[2] + z);
            let d = ((dst[2] + z) * side + dst[1] + y) * side + dst[0];
            values[d..d + len[0]].copy_from_slice(&volume.values[s..s + len[0]]);
        }
    }
    Volume3D::new([side; 3], volume.spacing_mm, values)
}
