//! One-vs-rest confusion metrics, ROC/AUC, cross-fold intervals, and the
//! uncertainty-grade analysis.
//!
//! Undefined ratios (no positives, no negatives, empty grades) are reported
//! as NaN rather than 0.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evidential::{grade_of, EvidentialOutput, NUM_GRADES};

/// One model prediction for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub true_class: usize,
    pub predicted_class: usize,
    pub probs: Vec<f64>,
    pub uncertainty: f64,
    pub grade: u8,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, true_class: usize, output: &EvidentialOutput) -> Self {
        Self {
            id: id.into(),
            true_class,
            predicted_class: output.predicted_class(),
            probs: output.probs.clone(),
            uncertainty: output.uncertainty,
            grade: output.grade,
        }
    }

    /// Rebuilds a record from stored fields, checking its invariants.
    pub fn from_parts(
        id: impl Into<String>,
        true_class: usize,
        predicted_class: usize,
        probs: Vec<f64>,
        uncertainty: f64,
        grade: u8,
    ) -> Result<Self> {
        let id = id.into();
        let k = probs.len();
        if true_class >= k || predicted_class >= k {
            return Err(Error::Invalid(format!("prediction '{id}': class index out of range for {k} classes")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("prediction '{id}': probabilities sum to {total}")));
        }
        if grade_of(uncertainty)? != grade {
            return Err(Error::Invalid(format!(
                "prediction '{id}': grade {grade} does not match uncertainty {uncertainty}"
            )));
        }
        Ok(Self {
            id,
            true_class,
            predicted_class,
            probs,
            uncertainty,
            grade,
        })
    }

    pub fn is_correct(&self) -> bool {
        self.true_class == self.predicted_class
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

/// `matrix[true][predicted]` counts.
pub fn confusion_matrix(preds: &[PredictionRecord], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for p in preds {
        m[p.true_class][p.predicted_class] += 1;
    }
    m
}

/// Accuracy, sensitivity and specificity with `class` as the positive class
/// and the argmax prediction as the operating point.
pub fn one_vs_rest_confusion_metrics(preds: &[PredictionRecord], class: usize) -> Result<ConfusionMetrics> {
    if preds.is_empty() {
        return Err(Error::Invalid("confusion metrics need at least one prediction".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for p in preds {
        match (p.true_class == class, p.predicted_class == class) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(ConfusionMetrics {
        accuracy: ratio(tp + tn, preds.len()),
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores at or above this value are called positive. The first point
    /// uses +∞.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub auc: f64,
    pub points: Vec<RocPoint>,
}

/// ROC curve over every distinct score and its trapezoidal area.
///
/// Tied scores enter the curve together as one diagonal step, which makes
/// the area equal to the Mann–Whitney concordance with ties counted ½.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            context: "roc scores/labels",
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("ROC scores must not be NaN".into()));
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Invalid(format!(
            "ROC needs both classes present ({positives} positives, {negatives} negatives)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Twice the area in units of (1/p)(1/n), kept integral until the end.
    let mut twice_area = 0u128;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += ((fp - fp0) * (tp + tp0)) as u128;
        points.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
            threshold: t,
        });
    }
    let auc = twice_area as f64 / (2.0 * p * n);
    Ok(RocCurve { auc, points })
}

/// Per-class metrics of a prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// NaN when the set lacks positives or negatives for this class.
    pub auc: f64,
    pub roc_points: Vec<RocPoint>,
}

/// Confusion metrics plus the ROC of the Dirichlet mean `α_c / S`.
pub fn class_metrics(preds: &[PredictionRecord], class: usize) -> Result<ClassMetrics> {
    let cm = one_vs_rest_confusion_metrics(preds, class)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.probs[class]).collect();
    let labels: Vec<bool> = preds.iter().map(|p| p.true_class == class).collect();
    let (auc, roc_points) = match roc_auc(&scores, &labels) {
        Ok(c) => (c.auc, c.points),
        Err(_) => (f64::NAN, Vec::new()),
    };
    Ok(ClassMetrics {
        accuracy: cm.accuracy,
        sensitivity: cm.sensitivity,
        specificity: cm.specificity,
        auc,
        roc_points,
    })
}

/// Mean of the per-class AUCs (NaN if any is undefined).
pub fn macro_auc(preds: &[PredictionRecord], classes: usize) -> Result<f64> {
    let mut total = 0.0;
    for c in 0..classes {
        total += class_metrics(preds, c)?.auc;
    }
    Ok(total / classes as f64)
}

/// Summary of one metric across folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldInterval {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub min: f64,
    pub max: f64,
}

/// Normal-approximation interval `mean ± z·sd/√k` over per-fold values,
/// with `z` the two-sided standard normal quantile of `level`.
pub fn fold_ci(values: &[f64], level: f64) -> Result<FoldInterval> {
    if values.len() < 2 {
        return Err(Error::Invalid(format!("fold interval needs >= 2 values, got {}", values.len())));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Invalid(format!("confidence level {level} must lie in (0, 1)")));
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    let sd = libm::sqrt(var);
    let half = normal_quantile(0.5 + level / 2.0) * sd / libm::sqrt(k);
    Ok(FoldInterval {
        mean,
        sd,
        ci_low: mean - half,
        ci_high: mean + half,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Standard normal quantile (Acklam's rational approximation with one
/// Halley refinement step).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let low = 0.02425;
    let x = if p < low {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley step against Φ(x) = erfc(−x/√2)/2.
    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let u = e * libm::sqrt(2.0 * core::f64::consts::PI) * libm::exp(x * x / 2.0);
    x - u / (1.0 + x * u / 2.0)
}

/// Percentile bootstrap interval of one class's AUC over pooled
/// predictions. Resamples lacking positives or negatives are skipped.
pub fn bootstrap_auc_ci(preds: &[PredictionRecord], class: usize, resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if preds.is_empty() || resamples == 0 {
        return Err(Error::Invalid("bootstrap needs predictions and at least one resample".into()));
    }
    let scores: Vec<f64> = preds.iter().map(|p| p.probs[class]).collect();
    let labels: Vec<bool> = preds.iter().map(|p| p.true_class == class).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aucs = Vec::with_capacity(resamples);
    let (mut s, mut l) = (vec![0.0; preds.len()], vec![false; preds.len()]);
    for _ in 0..resamples {
        for j in 0..preds.len() {
            let i = rng.random_range(0..preds.len());
            s[j] = scores[i];
            l[j] = labels[i];
        }
        if let Ok(c) = roc_auc(&s, &l) {
            aucs.push(c.auc);
        }
    }
    if aucs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    aucs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let alpha = (1.0 - level) / 2.0;
    Ok((percentile(&aucs, alpha), percentile(&aucs, 1.0 - alpha)))
}

/// Linear-interpolated percentile of sorted data, `q ∈ [0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradeRow {
    pub grade: u8,
    pub count: usize,
    pub correct: usize,
    /// NaN for an empty grade.
    pub correct_rate: f64,
}

/// Count and fraction of correct predictions within each uncertainty grade.
pub fn grade_correct_rates(preds: &[PredictionRecord]) -> [GradeRow; NUM_GRADES] {
    let mut rows = core::array::from_fn(|g| GradeRow {
        grade: g as u8 + 1,
        count: 0,
        correct: 0,
        correct_rate: f64::NAN,
    });
    for p in preds {
        let row: &mut GradeRow = &mut rows[usize::from(p.grade.clamp(1, NUM_GRADES as u8)) - 1];
        row.count += 1;
        row.correct += usize::from(p.is_correct());
    }
    for row in &mut rows {
        row.correct_rate = ratio(row.correct, row.count);
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    /// Wrong prediction at grade 1 or 2.
    ConfidentWrong,
    /// Correct prediction at grade 4 or 5.
    HesitantRight,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::ConfidentWrong => "confident-wrong",
            AnomalyKind::HesitantRight => "hesitant-right",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anomaly {
    pub id: String,
    pub kind: AnomalyKind,
}

/// Cases whose uncertainty disagrees with their correctness.
pub fn flag_anomalies(preds: &[PredictionRecord]) -> Vec<Anomaly> {
    preds
        .iter()
        .filter_map(|p| {
            let kind = match (p.is_correct(), p.grade) {
                (false, g) if g <= 2 => AnomalyKind::ConfidentWrong,
                (true, g) if g >= 4 => AnomalyKind::HesitantRight,
                _ => return None,
            };
            Some(Anomaly { id: p.id.clone(), kind })
        })
        .collect()
}

/// Median; the mean of the central pair for even counts, NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Median uncertainty per true class.
pub fn uncertainty_summary(preds: &[PredictionRecord], classes: usize) -> Vec<f64> {
    (0..classes)
        .map(|c| {
            let us: Vec<f64> = preds.iter().filter(|p| p.true_class == c).map(|p| p.uncertainty).collect();
            median(&us)
        })
        .collect()
}

/// Ranks starting at 1, ties given their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; NaN if either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            context: "spearman inputs",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Ok(f64::NAN);
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(f64::NAN);
    }
    Ok(sxy / libm::sqrt(sxx * syy))
}
