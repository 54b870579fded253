//! Report files derived from a predictions table.
//!
//! Everything except `run_config.json`, `loss_trace.csv` and checkpoints is
//! a pure function of `predictions.csv` and the bootstrap seed, so
//! `evidnet report` regenerates it bitwise. Undefined values are written
//! as `NaN`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use evidnet_core::data::{derive_seed, CLASS_NAMES};
use evidnet_core::metrics::{
    bootstrap_auc_ci, class_metrics, flag_anomalies, fold_ci, grade_correct_rates, macro_auc, uncertainty_summary,
    ClassMetrics, FoldInterval, PredictionRecord,
};
use evidnet_core::NUM_CLASSES;
use serde::{Deserialize, Serialize};

use crate::error::{csv_error, AppError, Result};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const CI_LEVEL: f64 = 0.95;
/// Fold label of predictions made on an external set.
pub const EXTERNAL_FOLD: &str = "external";

/// A prediction tagged with the fold that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub fold: String,
    pub record: PredictionRecord,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvPrediction {
    id: String,
    fold: String,
    #[serde(rename = "true")]
    true_class: usize,
    pred: usize,
    p0: f64,
    p1: f64,
    p2: f64,
    u: f64,
    grade: u8,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        let p = &r.record;
        w.serialize(CsvPrediction {
            id: p.id.clone(),
            fold: r.fold.clone(),
            true_class: p.true_class,
            pred: p.predicted_class,
            p0: p.probs[0],
            p1: p.probs[1],
            p2: p.probs[2],
            u: p.uncertainty,
            grade: p.grade,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize::<CsvPrediction>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| csv_error(path, e))?;
            let record = PredictionRecord::from_parts(
                row.id,
                row.true_class,
                row.pred,
                vec![row.p0, row.p1, row.p2],
                row.u,
                row.grade,
            )
            .map_err(|e| AppError::invalid(path, format!("line {}: {e}", i + 2)))?;
            Ok(PredictionRow { fold: row.fold, record })
        })
        .collect()
}

/// Headline numbers of a written report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub n: usize,
    pub accuracy: f64,
    pub macro_auc: f64,
    pub class_auc: Vec<f64>,
    pub grade_counts: Vec<usize>,
    pub grade_correct_rates: Vec<f64>,
}

/// Fold labels in first-appearance order with their predictions.
fn group_by_fold(rows: &[PredictionRow]) -> Vec<(String, Vec<PredictionRecord>)> {
    let mut groups: Vec<(String, Vec<PredictionRecord>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(f, _)| *f == r.fold) {
            Some((_, v)) => v.push(r.record.clone()),
            None => groups.push((r.fold.clone(), vec![r.record.clone()])),
        }
    }
    groups
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        v.to_string()
    }
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| AppError::io(&path, e))
}

/// Writes every derived report file for `rows` into `dir`.
pub fn write_report(dir: &Path, rows: &[PredictionRow], bootstrap_seed: u64) -> Result<ReportSummary> {
    if rows.is_empty() {
        return Err(AppError::Validation("cannot report on an empty prediction set".into()));
    }
    write_predictions(&dir.join(PREDICTIONS_FILE), rows)?;
    let pooled: Vec<PredictionRecord> = rows.iter().map(|r| r.record.clone()).collect();
    let folds = group_by_fold(rows);
    let external = folds.iter().all(|(f, _)| f == EXTERNAL_FOLD);

    let pooled_metrics: Vec<ClassMetrics> = (0..NUM_CLASSES)
        .map(|c| class_metrics(&pooled, c))
        .collect::<std::result::Result<_, _>>()?;

    for (c, m) in pooled_metrics.iter().enumerate() {
        let mut s = String::from("fpr,tpr,threshold\n");
        for p in &m.roc_points {
            writeln!(s, "{},{},{}", p.fpr, p.tpr, fmt(p.threshold)).unwrap();
        }
        write_text(dir, &format!("roc_class{c}.csv"), &s)?;
    }

    let grades = grade_correct_rates(&pooled);
    let mut s = String::from("grade,count,correct,correct_rate\n");
    for g in &grades {
        writeln!(s, "{},{},{},{}", g.grade, g.count, g.correct, fmt(g.correct_rate)).unwrap();
    }
    write_text(dir, "grades.csv", &s)?;

    let mut s = String::from("id,kind,true,pred,u,grade\n");
    for a in flag_anomalies(&pooled) {
        let p = pooled.iter().find(|p| p.id == a.id).expect("anomaly ids come from the pool");
        writeln!(s, "{},{},{},{},{},{}", a.id, a.kind.as_str(), p.true_class, p.predicted_class, p.uncertainty, p.grade)
            .unwrap();
    }
    write_text(dir, "anomalies.csv", &s)?;

    let medians = uncertainty_summary(&pooled, NUM_CLASSES);
    let mut s = String::from("class,name,count,median_u\n");
    for (c, m) in medians.iter().enumerate() {
        let count = pooled.iter().filter(|p| p.true_class == c).count();
        writeln!(s, "{c},{},{count},{}", CLASS_NAMES[c], fmt(*m)).unwrap();
    }
    write_text(dir, "uncertainty.csv", &s)?;

    // Per-fold metrics; AUC of a class is NaN when a fold lacks positives.
    let mut per_fold: Vec<[ClassMetrics; NUM_CLASSES]> = Vec::new();
    let mut fold_macro = Vec::new();
    let mut s = String::from("fold,n,class,accuracy,sensitivity,specificity,auc\n");
    for (label, preds) in &folds {
        let m: [ClassMetrics; NUM_CLASSES] = [class_metrics(preds, 0)?, class_metrics(preds, 1)?, class_metrics(preds, 2)?];
        for (c, cm) in m.iter().enumerate() {
            writeln!(
                s,
                "{label},{},{c},{},{},{},{}",
                preds.len(),
                fmt(cm.accuracy),
                fmt(cm.sensitivity),
                fmt(cm.specificity),
                fmt(cm.auc)
            )
            .unwrap();
        }
        fold_macro.push(macro_auc(preds, NUM_CLASSES)?);
        per_fold.push(m);
    }
    write_text(dir, "fold_metrics.csv", &s)?;

    let interval = |values: Vec<f64>| -> Option<FoldInterval> {
        if values.len() < 2 || values.iter().any(|v| v.is_nan()) {
            None
        } else {
            fold_ci(&values, CI_LEVEL).ok()
        }
    };
    let mut s = String::from(
        "class,metric,pooled,fold_mean,fold_sd,ci_low,ci_high,fold_min,fold_max,bootstrap_low,bootstrap_high\n",
    );
    let mut row = |class: &str, metric: &str, pooled: f64, fi: Option<FoldInterval>, boot: Option<(f64, f64)>| {
        let f = fi.map_or([f64::NAN; 6], |f| [f.mean, f.sd, f.ci_low, f.ci_high, f.min, f.max]);
        let b = boot.unwrap_or((f64::NAN, f64::NAN));
        writeln!(
            s,
            "{class},{metric},{},{},{},{},{},{},{},{},{}",
            fmt(pooled),
            fmt(f[0]),
            fmt(f[1]),
            fmt(f[2]),
            fmt(f[3]),
            fmt(f[4]),
            fmt(f[5]),
            fmt(b.0),
            fmt(b.1)
        )
        .unwrap();
    };
    let boot_seed = derive_seed(bootstrap_seed, 0xB0);
    for (c, m) in pooled_metrics.iter().enumerate() {
        let name = c.to_string();
        let pick = |f: fn(&ClassMetrics) -> f64| per_fold.iter().map(|m| f(&m[c])).collect::<Vec<_>>();
        row(&name, "accuracy", m.accuracy, interval(pick(|m| m.accuracy)), None);
        row(&name, "sensitivity", m.sensitivity, interval(pick(|m| m.sensitivity)), None);
        row(&name, "specificity", m.specificity, interval(pick(|m| m.specificity)), None);
        let boot = if m.auc.is_nan() {
            None
        } else {
            bootstrap_auc_ci(&pooled, c, BOOTSTRAP_RESAMPLES, CI_LEVEL, derive_seed(boot_seed, c as u64)).ok()
        };
        row(&name, "auc", m.auc, interval(pick(|m| m.auc)), boot);
    }
    let pooled_macro = macro_auc(&pooled, NUM_CLASSES)?;
    row("macro", "auc", pooled_macro, interval(fold_macro.clone()), None);
    write_text(dir, "metrics_summary.csv", &s)?;

    let correct = pooled.iter().filter(|p| p.is_correct()).count();
    let accuracy = correct as f64 / pooled.len() as f64;
    let mut s = String::new();
    if external {
        writeln!(s, "External evaluation of {} subjects", pooled.len()).unwrap();
    } else {
        writeln!(s, "Cross-validation over {} folds, {} subjects", folds.len(), pooled.len()).unwrap();
    }
    writeln!(s, "Pooled accuracy: {correct}/{} = {:.4}", pooled.len(), accuracy).unwrap();
    writeln!(s, "Pooled macro AUC: {:.4}", pooled_macro).unwrap();
    for (c, m) in pooled_metrics.iter().enumerate() {
        writeln!(
            s,
            "  {:<6} AUC {:.4}  sens {:.4}  spec {:.4}  acc {:.4}",
            CLASS_NAMES[c], m.auc, m.sensitivity, m.specificity, m.accuracy
        )
        .unwrap();
    }
    if let Some(fi) = interval(fold_macro) {
        writeln!(
            s,
            "Fold macro AUC: {:.4} ± {:.4} (95% CI {:.4} to {:.4}, range {:.4} to {:.4})",
            fi.mean, fi.sd, fi.ci_low, fi.ci_high, fi.min, fi.max
        )
        .unwrap();
    }
    writeln!(s, "Uncertainty grades (count, correct rate):").unwrap();
    for g in &grades {
        writeln!(s, "  grade {}: {:>4}  {:.4}", g.grade, g.count, g.correct_rate).unwrap();
    }
    writeln!(s, "Median uncertainty by class:").unwrap();
    for (c, m) in medians.iter().enumerate() {
        writeln!(s, "  {:<6} {:.4}", CLASS_NAMES[c], m).unwrap();
    }
    writeln!(s, "Anomalous cases: {}", flag_anomalies(&pooled).len()).unwrap();
    write_text(dir, "summary.txt", &s)?;

    Ok(ReportSummary {
        n: pooled.len(),
        accuracy,
        macro_auc: pooled_macro,
        class_auc: pooled_metrics.iter().map(|m| m.auc).collect(),
        grade_counts: grades.iter().map(|g| g.count).collect(),
        grade_correct_rates: grades.iter().map(|g| g.correct_rate).collect(),
    })
}

pub fn write_loss_trace(path: &Path, traces: &[(usize, Vec<f64>)]) -> Result<()> {
    let mut s = String::from("fold,epoch,loss\n");
    for (fold, losses) in traces {
        for (e, l) in losses.iter().enumerate() {
            writeln!(s, "{fold},{e},{l}").unwrap();
        }
    }
    fs::write(path, s).map_err(|e| AppError::io(path, e))
}
