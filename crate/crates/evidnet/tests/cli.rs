use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use evidnet::cli::{run_args, Outcome};
use evidnet::manifest::{load_manifest, write_manifest};
use evidnet::report::{read_predictions, PredictionRow};
use evidnet::AppError;
use walkdir::WalkDir;

/// Relative paths of every file under `root`, sorted.
fn files(root: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(root).unwrap().to_path_buf())
        .collect();
    out.sort();
    out
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn synth(out: &Path, n: usize, difficulty: &str, side: usize, seed: u64) -> Vec<usize> {
    let o = run_args([
        "synth",
        "--n",
        &n.to_string(),
        "--difficulty",
        difficulty,
        "--side",
        &side.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        &s(out),
    ])
    .unwrap();
    match o {
        Outcome::Synth { class_counts } => class_counts,
        other => panic!("unexpected outcome {other:?}"),
    }
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (fa, fb) = (files(a), files(b));
    assert_eq!(fa, fb);
    for f in &fa {
        assert!(fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap(), "{} differs", f.display());
    }
}

#[test]
fn synth_counts_follow_the_proportions_and_rerun_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let counts = synth(&dir.path().join("a"), 100, "easy", 16, 7);
    assert_eq!(counts, vec![59, 16, 25]);
    let m = load_manifest(&dir.path().join("a/manifest.jsonl")).unwrap();
    assert_eq!(m.records.len(), 100);
    assert!(m.records.iter().all(|r| m.volume_path(r).exists()));
    assert!(dir.path().join("a/run_config.json").exists());

    // The output directory name is part of the config snapshot, so the rerun
    // goes into the same place after moving the first result aside.
    fs::rename(dir.path().join("a"), dir.path().join("first")).unwrap();
    synth(&dir.path().join("a"), 100, "easy", 16, 7);
    assert_same_tree(&dir.path().join("first"), &dir.path().join("a"));
}

#[test]
fn too_few_subjects_per_class_fail_stratification_with_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let counts = synth(&data, 15, "easy", 8, 3);
    let err = run_args([
        "crossval",
        "--manifest",
        &s(&data.join("manifest.jsonl")),
        "--folds",
        "5",
        "--epochs",
        "1",
        "--channels",
        "2",
        "--side",
        "8",
        "--out",
        &s(&dir.path().join("cv")),
    ])
    .unwrap_err();
    assert!(matches!(err, AppError::Validation(_)), "{err}");
    let msg = err.to_string();
    assert!(msg.contains(&format!("{counts:?}")), "{msg} lacks {counts:?}");

    let status = Command::new(env!("CARGO_BIN_EXE_evidnet"))
        .args(["crossval", "--manifest", &s(&data.join("manifest.jsonl")), "--side", "8", "--out"])
        .arg(dir.path().join("cv2"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).starts_with("error: "));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_evidnet");
    assert_eq!(Command::new(bin).arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(Command::new(bin).arg("frobnicate").output().unwrap().status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = Command::new(bin)
        .args(["detect-merge", "--manifest"])
        .arg(dir.path().join("nope.jsonl"))
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn detect_merge_unions_boxes_and_lists_skipped_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("boxes")).unwrap();
    fs::write(root.join("boxes/a.csv"), "slice_z,x_min,y_min,x_max,y_max\n3,10,12,20,25\n4,9,11,22,24\n").unwrap();
    fs::write(root.join("boxes/c.csv"), "slice_z,x_min,y_min,x_max,y_max\n").unwrap();
    let records: Vec<_> = ["a", "b", "c"]
        .iter()
        .map(|id| evidnet_core::data::SubjectRecord {
            id: id.to_string(),
            label: 0,
            volume_path: format!("{id}.json"),
            boxes_path: None,
        })
        .collect();
    write_manifest(&root.join("m.jsonl"), &records).unwrap();
    let out = root.join("vois");
    let o = run_args([
        "detect-merge",
        "--manifest",
        &s(&root.join("m.jsonl")),
        "--boxes-dir",
        &s(&root.join("boxes")),
        "--out",
        &s(&out),
    ])
    .unwrap();
    assert_eq!(
        o,
        Outcome::DetectMerge {
            merged: 1,
            skipped: vec!["b".into(), "c".into()]
        }
    );
    let vois = evidnet::boxes::read_vois(&out.join("vois.csv")).unwrap();
    assert_eq!(vois["a"].min_voxel, [9, 11, 3]);
    assert_eq!(vois["a"].max_voxel, [22, 25, 4]);
    let skipped = fs::read_to_string(out.join("skipped.csv")).unwrap();
    assert!(skipped.starts_with("id,reason\n"));
    assert!(skipped.contains("b,missing") && skipped.contains("c,no boxes"), "{skipped}");
}

struct Trained {
    _dir: tempfile::TempDir,
    data: PathBuf,
    cv: PathBuf,
}

const TRAIN_FLAGS: [&str; 10] = ["--epochs", "30", "--lr", "1e-3", "--batch", "16", "--channels", "4", "--side", "16"];

/// One small easy cross-validation run shared by the evaluation tests.
fn trained() -> &'static Trained {
    static RUN: OnceLock<Trained> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        synth(&data, 60, "easy", 24, 11);
        run_args(["detect-merge", "--manifest", &s(&data.join("manifest.jsonl")), "--out", &s(&data.join("vois"))]).unwrap();
        let cv = dir.path().join("cv");
        let mut args = vec![
            "crossval".to_string(),
            "--manifest".into(),
            s(&data.join("manifest.jsonl")),
            "--vois".into(),
            s(&data.join("vois/vois.csv")),
            "--folds".into(),
            "3".into(),
            "--out".into(),
            s(&cv),
        ];
        args.extend(TRAIN_FLAGS.iter().map(|a| a.to_string()));
        run_args(args).unwrap();
        Trained { _dir: dir, data, cv }
    })
}

fn eval(checkpoint: &Path, manifest: &Path, vois: &Path, out: &Path) -> Vec<PredictionRow> {
    run_args([
        "eval",
        "--checkpoint",
        &s(checkpoint),
        "--manifest",
        &s(manifest),
        "--vois",
        &s(vois),
        "--out",
        &s(out),
    ])
    .unwrap();
    read_predictions(&out.join("predictions.csv")).unwrap()
}

#[test]
fn crossval_report_layout() {
    let t = trained();
    for f in [
        "predictions.csv",
        "fold_metrics.csv",
        "metrics_summary.csv",
        "grades.csv",
        "anomalies.csv",
        "uncertainty.csv",
        "roc_class0.csv",
        "roc_class1.csv",
        "roc_class2.csv",
        "loss_trace.csv",
        "summary.txt",
        "run_config.json",
        "checkpoints/fold0.ckpt",
        "checkpoints/fold2.ckpt",
    ] {
        assert!(t.cv.join(f).exists(), "missing {f}");
    }
    let rows = read_predictions(&t.cv.join("predictions.csv")).unwrap();
    assert_eq!(rows.len(), 60);
    let grades = fs::read_to_string(t.cv.join("grades.csv")).unwrap();
    let pooled: usize = grades
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(pooled, 60, "{grades}");
    let summary = fs::read_to_string(t.cv.join("metrics_summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("macro,auc,")), "{summary}");
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.cv.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["optimizer"]["epochs"], 30);
    assert_eq!(cfg["k_folds"], 3);
}

#[test]
fn eval_on_a_fold_validation_split_matches_crossval_output() {
    let t = trained();
    let rows = read_predictions(&t.cv.join("predictions.csv")).unwrap();
    let fold0: BTreeMap<String, &PredictionRow> =
        rows.iter().filter(|r| r.fold == "0").map(|r| (r.record.id.clone(), r)).collect();
    let manifest = load_manifest(&t.data.join("manifest.jsonl")).unwrap();
    let subset: Vec<_> = manifest.records.iter().filter(|r| fold0.contains_key(&r.id)).cloned().collect();
    let sub_path = t.data.join("fold0.jsonl");
    write_manifest(&sub_path, &subset).unwrap();
    let out = t.cv.parent().unwrap().join("eval_fold0");
    let ext = eval(&t.cv.join("checkpoints/fold0.ckpt"), &sub_path, &t.data.join("vois/vois.csv"), &out);
    assert_eq!(ext.len(), fold0.len());
    for r in &ext {
        assert_eq!(r.fold, "external");
        assert_eq!(&r.record, &fold0[&r.record.id].record);
    }

    // A single-subject manifest still yields a report with one row.
    let one = t.data.join("one.jsonl");
    write_manifest(&one, &subset[..1]).unwrap();
    let out1 = t.cv.parent().unwrap().join("eval_one");
    assert_eq!(eval(&t.cv.join("checkpoints/fold0.ckpt"), &one, &t.data.join("vois/vois.csv"), &out1).len(), 1);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn harder_external_cohort_raises_uncertainty() {
    let t = trained();
    let root = t.cv.parent().unwrap().join("hard");
    synth(&root, 60, "hard", 24, 12);
    run_args(["detect-merge", "--manifest", &s(&root.join("manifest.jsonl")), "--out", &s(&root.join("vois"))]).unwrap();
    let internal: Vec<f64> = read_predictions(&t.cv.join("predictions.csv"))
        .unwrap()
        .iter()
        .filter(|r| r.fold == "0")
        .map(|r| r.record.uncertainty)
        .collect();
    let external: Vec<f64> = eval(
        &t.cv.join("checkpoints/fold0.ckpt"),
        &root.join("manifest.jsonl"),
        &root.join("vois/vois.csv"),
        &root.join("eval"),
    )
    .iter()
    .map(|r| r.record.uncertainty)
    .collect();
    let (mi, me) = (median(internal), median(external));
    assert!(me >= mi, "median u external {me} < internal {mi}");
}

#[test]
fn report_regenerates_identical_files() {
    let t = trained();
    let copy = t.cv.parent().unwrap().join("regen");
    fs::create_dir_all(&copy).unwrap();
    fs::copy(t.cv.join("predictions.csv"), copy.join("predictions.csv")).unwrap();
    fs::copy(t.cv.join("run_config.json"), copy.join("run_config.json")).unwrap();
    run_args(["report", "--out", &s(&copy)]).unwrap();
    for f in files(&copy) {
        assert!(fs::read(copy.join(&f)).unwrap() == fs::read(t.cv.join(&f)).unwrap(), "{} differs", f.display());
    }
}
