//! Cohort bookkeeping: subject records, stratified k-fold splits, class
//! counts and the synthetic cohort generator used for desk-scale runs.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::detection::Box2D;
use crate::error::{Error, Result};
use crate::volume::Volume3D;
use crate::NUM_CLASSES;

/// Class names in label order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["ccRCC", "pRCC", "chRCC"];

/// Subtype proportions of the reference cohort (ccRCC, pRCC, chRCC).
pub const DEFAULT_PROPORTIONS: [f64; NUM_CLASSES] = [0.59, 0.16, 0.25];

/// Independent 64-bit seed for sub-stream `stream` of a run seeded with
/// `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One labeled case of a cohort manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubjectRecord {
    pub id: String,
    pub label: usize,
    pub volume_path: String,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub boxes_path: Option<String>,
}

/// Checks id uniqueness and label range.
pub fn validate_records(records: &[SubjectRecord], classes: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (line, r) in records.iter().enumerate() {
        if r.id.is_empty() {
            return Err(Error::Invalid(format!("record {} has an empty id", line + 1)));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Invalid(format!("duplicate subject id '{}'", r.id)));
        }
        if r.label >= classes {
            return Err(Error::Invalid(format!(
                "subject '{}' has label {} but only {classes} classes exist",
                r.id, r.label
            )));
        }
    }
    Ok(())
}

/// Exact per-class counts of the given labels.
pub fn class_counts(labels: impl IntoIterator<Item = usize>, classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for l in labels {
        counts[l] += 1;
    }
    counts
}

/// Train/validation partition by position in the input list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldIndices {
    pub fold_index: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Train/validation partition by subject id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
}

/// Stratified k-fold over integer labels.
///
/// Members of each class are shuffled with `seed`, classes are laid end to
/// end, and position `p` of that sequence goes to fold `p mod k`. Every
/// class is then spread over the folds with counts differing by at most
/// one, and so are the fold sizes.
pub fn stratified_kfold_indices(labels: &[usize], classes: usize, k: usize, seed: u64) -> Result<Vec<FoldIndices>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if let Some(l) = labels.iter().find(|l| **l >= classes) {
        return Err(Error::Invalid(format!("label {l} out of range for {classes} classes")));
    }
    let counts = class_counts(labels.iter().copied(), classes);
    if let Some(c) = counts.iter().position(|n| *n < k) {
        return Err(Error::Config(format!(
            "class {c} has {} members, fewer than the {k} folds requested (class counts {counts:?})",
            counts[c]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; labels.len()];
    let mut position = 0usize;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == c).collect();
        members.shuffle(&mut rng);
        for m in members {
            fold_of[m] = position % k;
            position += 1;
        }
    }
    Ok((0..k)
        .map(|f| FoldIndices {
            fold_index: f,
            train: (0..labels.len()).filter(|i| fold_of[*i] != f).collect(),
            validation: (0..labels.len()).filter(|i| fold_of[*i] == f).collect(),
        })
        .collect())
}

/// Stratified k-fold over manifest records, returning subject ids.
pub fn stratified_kfold(records: &[SubjectRecord], classes: usize, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    validate_records(records, classes)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let ids = |idx: &[usize]| idx.iter().map(|i| records[*i].id.clone()).collect();
    Ok(stratified_kfold_indices(&labels, classes, k, seed)?
        .into_iter()
        .map(|f| FoldSplit {
            fold_index: f.fold_index,
            train_ids: ids(&f.train),
            validation_ids: ids(&f.validation),
        })
        .collect())
}

/// Splits `n` into integer counts proportional to `proportions` by the
/// largest-remainder method (ties go to the lower class index).
pub fn largest_remainder(n: usize, proportions: &[f64]) -> Result<Vec<usize>> {
    validate_proportions(proportions)?;
    let quotas: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    let frac = |i: usize| quotas[i] - libm::floor(quotas[i]);
    order.sort_by(|&a, &b| frac(b).partial_cmp(&frac(a)).unwrap_or(core::cmp::Ordering::Equal));
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(counts)
}

fn validate_proportions(proportions: &[f64]) -> Result<()> {
    if proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Invalid(format!("proportions {proportions:?} must be non-negative")));
    }
    let total: f64 = proportions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("proportions {proportions:?} sum to {total}, not 1")));
    }
    Ok(())
}

/// Noise and class-overlap level of a synthetic cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Difficulty {
    #[default]
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }

    /// (voxel noise SD in HU, subject intensity SD in HU, radius SD as a
    /// fraction of the cube side, largest blend toward another class)
    fn spread(self) -> (f64, f64, f64, f64) {
        match self {
            Difficulty::Easy => (4.0, 4.0, 0.01, 0.0),
            Difficulty::Medium => (25.0, 35.0, 0.05, 0.0),
            Difficulty::Hard => (25.0, 35.0, 0.05, 0.5),
        }
    }
}

impl core::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Invalid(format!("unknown difficulty '{other}' (easy|medium|hard)"))),
        }
    }
}

/// Per-class tumor appearance: mean enhancement (HU), radius as a fraction
/// of the cube side, internal texture amplitude (HU).
const CLASS_PROFILES: [(f64, f64, f64); NUM_CLASSES] = [(150.0, 0.30, 25.0), (40.0, 0.16, 4.0), (95.0, 0.23, 12.0)];

/// Attenuation of the surrounding parenchyma (HU).
const BACKGROUND_HU: f64 = -30.0;

/// A generated subject with its latent appearance parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSubject {
    pub id: String,
    pub label: usize,
    /// Raw attenuation in HU on a 1 mm isotropic grid.
    pub volume: Volume3D,
    pub intensity_hu: f64,
    pub radius: f64,
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl SyntheticSubject {
    /// Per-slice bounding boxes of the ellipsoid cross-sections, as an
    /// ideal detector would report them.
    pub fn slice_boxes(&self) -> Vec<Box2D> {
        let [nx, ny, nz] = self.volume.dims();
        let mut out = Vec::new();
        for z in 0..nz {
            let dz = (z as f64 - self.center[2]) / self.radii[2];
            let scale = 1.0 - dz * dz;
            if scale <= 0.0 {
                continue;
            }
            let s = libm::sqrt(scale);
            let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
            let (hx, hy) = (self.radii[0] * s, self.radii[1] * s);
            out.push(Box2D {
                slice_z: z as i64,
                min: [clamp(self.center[0] - hx, nx), clamp(self.center[1] - hy, ny)],
                max: [clamp(self.center[0] + hx, nx), clamp(self.center[1] + hy, ny)],
                confidence: None,
            });
        }
        out
    }
}

/// Generates `n` subjects with ellipsoidal tumors on a `side`³ cube.
///
/// Class counts follow `proportions` by largest remainder, the label order
/// is shuffled, and every subject draws from its own seed-derived stream,
/// so the cohort is a pure function of the arguments.
pub fn generate_synthetic_cohort(
    n: usize,
    proportions: &[f64],
    difficulty: Difficulty,
    side: usize,
    seed: u64,
) -> Result<Vec<SyntheticSubject>> {
    if proportions.len() != NUM_CLASSES {
        return Err(Error::Invalid(format!(
            "synthetic cohorts have {NUM_CLASSES} classes, got {} proportions",
            proportions.len()
        )));
    }
    if n < 15 {
        return Err(Error::Invalid(format!("synthetic cohort needs n >= 15, got {n}")));
    }
    if side < 8 {
        return Err(Error::Invalid(format!("synthetic cube side must be >= 8, got {side}")));
    }
    let counts = largest_remainder(n, proportions)?;
    let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, k)| core::iter::repeat_n(c, *k)).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0)));

    let width = if n > 1 { libm::floor(libm::log10((n - 1) as f64)) as usize + 1 } else { 1 };
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 + i as u64));
            let id = format!("subj_{i:0width$}");
            synth_subject(&mut rng, id, label, difficulty, side)
        })
        .collect()
}

fn squared(v: f64) -> f64 {
    v * v
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("finite positive standard deviation")
}

fn synth_subject(rng: &mut ChaCha8Rng, id: String, label: usize, difficulty: Difficulty, side: usize) -> Result<SyntheticSubject> {
    let (noise_sd, intensity_sd, radius_sd, max_blend) = difficulty.spread();
    let (mut mean_hu, mut radius_frac, mut texture_hu) = CLASS_PROFILES[label];
    // Overlap: the appearance drifts part of the way toward another class.
    // No draws happen without it, so easier cohorts keep their streams.
    if max_blend > 0.0 {
        let other = (label + rng.random_range(1..NUM_CLASSES)) % NUM_CLASSES;
        let m = rng.random_range(0.0..max_blend);
        let (h, r, t) = CLASS_PROFILES[other];
        mean_hu += m * (h - mean_hu);
        radius_frac += m * (r - radius_frac);
        texture_hu += m * (t - texture_hu);
    }
    let s = side as f64;

    let intensity_hu = normal(mean_hu, intensity_sd).sample(rng);
    let radius = (s * normal(radius_frac, radius_sd).sample(rng)).max(2.0);
    let mut radii = [0.0; 3];
    for r in &mut radii {
        *r = radius * rng.random_range(0.9..1.1);
    }
    let mut center = [0.0; 3];
    for c in &mut center {
        *c = (s - 1.0) / 2.0 + rng.random_range(-s / 16.0..s / 16.0);
    }
    let phase: [f64; 3] = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
    let freq = 0.9;
    let noise = normal(0.0, noise_sd);

    let mut values = Vec::with_capacity(side * side * side);
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                let p = [x as f64, y as f64, z as f64];
                let r2: f64 = (0..3).map(|a| squared((p[a] - center[a]) / radii[a])).sum();
                let base = if r2 <= 1.0 {
                    let texture = (0..3).map(|a| libm::sin(freq * p[a] + phase[a])).product::<f64>();
                    intensity_hu + texture_hu * texture
                } else {
                    BACKGROUND_HU
                };
                values.push((base + noise.sample(rng)) as f32);
            }
        }
    }
    Ok(SyntheticSubject {
        id,
        label,
        volume: Volume3D::new([side; 3], [1.0; 3], values)?,
        intensity_hu,
        radius,
        center,
        radii,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn rec(id: &str, label: usize) -> SubjectRecord {
        SubjectRecord {
            id: id.to_string(),
            label,
            volume_path: format!("{id}.json"),
            boxes_path: None,
        }
    }

    #[test]
    fn counts() {
        assert_eq!(class_counts([], 3), [0, 0, 0]);
        assert_eq!(class_counts([0, 0, 1, 2, 2, 2], 3), [2, 1, 3]);
    }

    #[test]
    fn record_validation() {
        let ok = [rec("a", 0), rec("b", 1), rec("c", 2)];
        assert!(validate_records(&ok, 3).is_ok());
        let dup = [rec("a", 0), rec("a", 1)];
        let err = validate_records(&dup, 3).unwrap_err().to_string();
        assert!(err.contains("'a'"), "{err}");
        let bad = [rec("a", 0), rec("x7", 4)];
        let err = validate_records(&bad, 3).unwrap_err().to_string();
        assert!(err.contains("'x7'"), "{err}");
    }

    #[test]
    fn small_stratified_example() {
        let labels = [0, 0, 0, 0, 0, 0, 1, 1, 2, 2];
        // Classes 1 and 2 have fewer members than folds.
        let err = stratified_kfold_indices(&labels, 3, 5, 11).unwrap_err();
        assert!(err.to_string().contains("[6, 2, 2]"), "{err}");
        // With k = 2 every fold holds half of each class.
        let folds = stratified_kfold_indices(&labels, 3, 2, 11).unwrap();
        for f in &folds {
            assert_eq!(f.validation.len(), 5);
            assert_eq!(class_counts(f.validation.iter().map(|i| labels[*i]), 3), [3, 1, 1]);
        }
    }

    #[test]
    fn reference_cohort_fold_sizes() {
        let labels: Vec<usize> = [(0, 395), (1, 167), (2, 106)]
            .iter()
            .flat_map(|(c, n)| core::iter::repeat_n(*c, *n))
            .collect();
        let folds = stratified_kfold_indices(&labels, 3, 5, 0).unwrap();
        for f in &folds {
            assert!([133, 134].contains(&f.validation.len()));
            assert_eq!(f.train.len() + f.validation.len(), 668);
        }
    }

    #[test]
    fn too_few_members_is_a_config_error() {
        let err = stratified_kfold_indices(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 2], 3, 5, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("[5, 4, 1]"), "{err}");
    }

    #[test]
    fn id_folds_are_deterministic() {
        let records: Vec<SubjectRecord> = (0..20).map(|i| rec(&format!("s{i}"), i % 3)).collect();
        let a = stratified_kfold(&records, 3, 5, 9).unwrap();
        let b = stratified_kfold(&records, 3, 5, 9).unwrap();
        assert_eq!(a, b);
        let c = stratified_kfold(&records, 3, 5, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(largest_remainder(100, &DEFAULT_PROPORTIONS).unwrap(), [59, 16, 25]);
        assert_eq!(largest_remainder(150, &DEFAULT_PROPORTIONS).unwrap(), [89, 24, 37]);
        assert_eq!(largest_remainder(10, &[1.0 / 3.0; 3]).unwrap(), [4, 3, 3]);
        assert!(largest_remainder(10, &[0.5, 0.6, 0.0]).is_err());
        assert!(largest_remainder(10, &[-0.5, 1.5, 0.0]).is_err());
    }

    #[test]
    fn synthetic_cohort_is_reproducible() {
        let a = generate_synthetic_cohort(20, &DEFAULT_PROPORTIONS, Difficulty::Medium, 16, 5).unwrap();
        let b = generate_synthetic_cohort(20, &DEFAULT_PROPORTIONS, Difficulty::Medium, 16, 5).unwrap();
        assert_eq!(a, b);
        let counts = class_counts(a.iter().map(|s| s.label), 3);
        assert_eq!(counts, largest_remainder(20, &DEFAULT_PROPORTIONS).unwrap());
        assert_eq!(a[0].id, "subj_00");
        assert!(generate_synthetic_cohort(10, &DEFAULT_PROPORTIONS, Difficulty::Easy, 16, 5).is_err());
        assert!(generate_synthetic_cohort(20, &[0.5, 0.5], Difficulty::Easy, 16, 5).is_err());
    }

    #[test]
    fn slice_boxes_cover_the_tumor() {
        let cohort = generate_synthetic_cohort(15, &DEFAULT_PROPORTIONS, Difficulty::Easy, 32, 1).unwrap();
        for s in &cohort {
            let boxes = s.slice_boxes();
            assert!(!boxes.is_empty());
            let merged = crate::detection::merge_slices(&boxes).unwrap();
            for a in 0..3 {
                assert!(merged.min_voxel[a] as f64 <= s.center[a]);
                assert!(merged.max_voxel[a] as f64 >= s.center[a]);
            }
        }
    }

    /// Multinomial logistic regression on standardized (intensity, radius),
    /// fitted by full-batch gradient descent. One-vs-rest least squares
    /// would mask the class whose features sit between the other two.
    fn linear_probe_accuracy(features: &[[f64; 2]], labels: &[usize]) -> f64 {
        let n = features.len() as f64;
        let mean = [0, 1].map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n);
        let sd = [0, 1].map(|j| libm::sqrt(features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n));
        let design: Vec<[f64; 3]> = features
            .iter()
            .map(|f| [1.0, (f[0] - mean[0]) / sd[0], (f[1] - mean[1]) / sd[1]])
            .collect();
        let scores = |w: &[[f64; 3]; 3], row: &[f64; 3]| w.map(|wc| (0..3).map(|i| wc[i] * row[i]).sum::<f64>());
        let mut w = [[0.0; 3]; 3];
        for _ in 0..3000 {
            let mut grad = [[0.0; 3]; 3];
            for (row, &l) in design.iter().zip(labels) {
                let s = scores(&w, row);
                let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e = s.map(|v| libm::exp(v - top));
                let z: f64 = e.iter().sum();
                for c in 0..3 {
                    let r = e[c] / z - if c == l { 1.0 } else { 0.0 };
                    for i in 0..3 {
                        grad[c][i] += r * row[i] / n;
                    }
                }
            }
            for c in 0..3 {
                for i in 0..3 {
                    w[c][i] -= 2.0 * grad[c][i];
                }
            }
        }
        let correct = design
            .iter()
            .zip(labels)
            .filter(|(row, l)| crate::evidential::argmax(&scores(&w, row)) == **l)
            .count();
        correct as f64 / labels.len() as f64
    }

    #[test]
    fn easy_cohort_is_linearly_separable() {
        let cohort = generate_synthetic_cohort(300, &DEFAULT_PROPORTIONS, Difficulty::Easy, 32, 17).unwrap();
        // Mean intensity measured from the voxels inside each ellipsoid.
        let features: Vec<[f64; 2]> = cohort
            .iter()
            .map(|s| {
                let (mut sum, mut count) = (0.0, 0usize);
                for z in 0..32 {
                    for y in 0..32 {
                        for x in 0..32 {
                            let p = [x as f64, y as f64, z as f64];
                            let r2: f64 = (0..3).map(|a| ((p[a] - s.center[a]) / s.radii[a]).powi(2)).sum();
                            if r2 <= 1.0 {
                                sum += s.volume.get(x, y, z) as f64;
                                count += 1;
                            }
                        }
                    }
                }
                [sum / count as f64, s.radius]
            })
            .collect();
        let labels: Vec<usize> = cohort.iter().map(|s| s.label).collect();
        let acc = linear_probe_accuracy(&features, &labels);
        assert!(acc >= 0.95, "probe accuracy {acc}");
    }

    proptest! {
        #[test]
        fn largest_remainder_sums_to_n(n in 0usize..5000, raw in proptest::collection::vec(0.0f64..1.0, 1..6)) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let props: Vec<f64> = raw.iter().map(|r| r / total).collect();
            prop_assume!((props.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let counts = largest_remainder(n, &props).unwrap();
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            for (c, p) in counts.iter().zip(&props) {
                prop_assert!((*c as f64 - p * n as f64).abs() < 1.0 + 1e-9);
            }
        }

        #[test]
        fn folds_partition_and_stratify(labels in proptest::collection::vec(0usize..3, 15..120), k in 2usize..6, seed in any::<u64>()) {
            let counts = class_counts(labels.iter().copied(), 3);
            prop_assume!(counts.iter().all(|c| *c >= k));
            let folds = stratified_kfold_indices(&labels, 3, k, seed).unwrap();
            let mut seen = vec![0usize; labels.len()];
            for f in &folds {
                for v in &f.validation { seen[*v] += 1; }
                let val: BTreeSet<usize> = f.validation.iter().copied().collect();
                prop_assert!(f.train.iter().all(|t| !val.contains(t)));
                prop_assert_eq!(f.train.len() + f.validation.len(), labels.len());
            }
            prop_assert!(seen.iter().all(|s| *s == 1));
            for c in 0..3 {
                let per: Vec<usize> = folds.iter().map(|f| f.validation.iter().filter(|i| labels[**i] == c).count()).collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
            let sizes: Vec<usize> = folds.iter().map(|f| f.validation.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
