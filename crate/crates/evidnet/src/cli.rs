//! Command-line interface.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use evidnet_core::data::{class_counts, generate_synthetic_cohort, Difficulty, SubjectRecord, DEFAULT_PROPORTIONS};
use evidnet_core::detection::merge_slices;
use evidnet_core::network::{EvidenceActivation, NetworkConfig, OptimizerConfig};
use evidnet_core::{Box3D, NUM_CLASSES};
use serde::{Deserialize, Serialize};

use crate::boxes::{read_slice_boxes, write_slice_boxes, write_vois};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{AppError, Result};
use crate::manifest::{load_manifest, write_manifest};
use crate::pipeline::{crossval, predict, prepare_cohort, CrossvalSettings, Preprocess};
use crate::report::{read_predictions, write_loss_trace, write_report, PredictionRow, ReportSummary, EXTERNAL_FOLD};
use crate::volume_io::{write_json, write_volume};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Parser)]
#[command(name = "evidnet", version, about = "Evidential 3D CNN for three-class tumor subtyping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort: volumes, slice boxes and a manifest.
    Synth(SynthArgs),
    /// Merge per-slice boxes into one volume of interest per subject.
    DetectMerge(DetectMergeArgs),
    /// Stratified k-fold training and pooled validation report.
    Crossval(CrossvalArgs),
    /// Evaluate a checkpoint on an external manifest.
    Eval(EvalArgs),
    /// Regenerate report files from an existing predictions.csv.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DifficultyArg {
    Easy,
    Medium,
    Hard,
}

impl From<DifficultyArg> for Difficulty {
    fn from(d: DifficultyArg) -> Self {
        match d {
            DifficultyArg::Easy => Difficulty::Easy,
            DifficultyArg::Medium => Difficulty::Medium,
            DifficultyArg::Hard => Difficulty::Hard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Softplus,
}

impl From<ActivationArg> for EvidenceActivation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Relu => EvidenceActivation::Relu,
            ActivationArg::Softplus => EvidenceActivation::Softplus,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 150)]
    pub n: usize,
    /// Cube edge of the generated volumes in voxels (1 mm spacing).
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[arg(long, value_enum, default_value_t = DifficultyArg::Easy)]
    pub difficulty: DifficultyArg,
    /// Class proportions (ccRCC, pRCC, chRCC).
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = DEFAULT_PROPORTIONS)]
    pub proportions: Vec<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectMergeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of `<id>.csv` box files; defaults to each record's boxes_path.
    #[arg(long)]
    pub boxes_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Width of the stage-1 convolution and of both residual blocks.
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, value_enum, default_value_t = ActivationArg::Relu)]
    pub activation: ActivationArg,
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    /// Edge of the cubic network input in voxels.
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long, default_value_t = 300.0)]
    pub window_width: f64,
    #[arg(long, default_value_t = 40.0)]
    pub window_level: f64,
    #[arg(long, default_value_t = 1.0)]
    pub target_mm: f64,
}

impl PreprocessArgs {
    fn resolve(&self, default_side: usize) -> Preprocess {
        Preprocess {
            window_width: self.window_width,
            window_level: self.window_level,
            target_mm: self.target_mm,
            side: self.side.unwrap_or(default_side),
        }
    }
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// VoI table from detect-merge; without it whole volumes are used.
    #[arg(long)]
    pub vois: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub vois: Option<PathBuf>,
    /// Seed of the bootstrap confidence intervals.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding predictions.csv and run_config.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n: usize,
    pub proportions: Vec<f64>,
    pub difficulty: Difficulty,
    pub side: usize,
}

/// Fully resolved settings of one command, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub k_folds: Option<usize>,
    pub manifest: Option<String>,
    pub vois: Option<String>,
    pub boxes_dir: Option<String>,
    pub checkpoint: Option<String>,
    pub out: String,
    pub synthetic: Option<SyntheticParams>,
    pub preprocess: Option<Preprocess>,
    pub network: Option<NetworkConfig>,
    pub optimizer: Option<OptimizerConfig>,
}

impl RunConfig {
    fn new(command: &str, seed: u64, out: &Path) -> Self {
        Self {
            command: command.into(),
            seed,
            k_folds: None,
            manifest: None,
            vois: None,
            boxes_dir: None,
            checkpoint: None,
            out: path_string(out),
            synthetic: None,
            preprocess: None,
            network: None,
            optimizer: None,
        }
    }
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

/// What a command produced, for callers that want more than files.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Synth { class_counts: Vec<usize> },
    DetectMerge { merged: usize, skipped: Vec<String> },
    Report(ReportSummary),
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::DetectMerge(a) => detect_merge(&a),
        Command::Crossval(a) => run_crossval(&a),
        Command::Eval(a) => eval(&a),
        Command::Report(a) => report(&a),
    }
}

/// Parses `args` (without the program name) and runs the command.
pub fn run_args<I, S>(args: I) -> Result<Outcome>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("evidnet")).chain(args.into_iter().map(Into::into));
    let cli = Cli::try_parse_from(argv).map_err(|e| AppError::Validation(e.to_string()))?;
    run(cli)
}

fn synth(a: &SynthArgs) -> Result<Outcome> {
    let difficulty = Difficulty::from(a.difficulty);
    let cohort = generate_synthetic_cohort(a.n, &a.proportions, difficulty, a.side, a.seed)?;
    create_dir(&a.out.join("volumes"))?;
    create_dir(&a.out.join("boxes"))?;
    let mut records = Vec::with_capacity(cohort.len());
    for s in &cohort {
        let volume_path = format!("volumes/{}.json", s.id);
        let boxes_path = format!("boxes/{}.csv", s.id);
        write_volume(&a.out.join(&volume_path), &s.volume)?;
        write_slice_boxes(&a.out.join(&boxes_path), &s.slice_boxes())?;
        records.push(SubjectRecord {
            id: s.id.clone(),
            label: s.label,
            volume_path,
            boxes_path: Some(boxes_path),
        });
    }
    write_manifest(&a.out.join("manifest.jsonl"), &records)?;
    let mut cfg = RunConfig::new("synth", a.seed, &a.out);
    cfg.synthetic = Some(SyntheticParams {
        n: a.n,
        proportions: a.proportions.clone(),
        difficulty,
        side: a.side,
    });
    write_json(&a.out.join(RUN_CONFIG_FILE), &cfg)?;
    Ok(Outcome::Synth {
        class_counts: class_counts(records.iter().map(|r| r.label), NUM_CLASSES),
    })
}

fn detect_merge(a: &DetectMergeArgs) -> Result<Outcome> {
    let manifest = load_manifest(&a.manifest)?;
    let mut vois: BTreeMap<String, Box3D> = BTreeMap::new();
    let mut skipped: Vec<(String, String)> = Vec::new();
    for r in &manifest.records {
        let path = match (&a.boxes_dir, manifest.boxes_path(r)) {
            (Some(dir), _) => dir.join(format!("{}.csv", r.id)),
            (None, Some(p)) => p,
            (None, None) => {
                skipped.push((r.id.clone(), "no boxes file listed".into()));
                continue;
            }
        };
        if !path.exists() {
            skipped.push((r.id.clone(), format!("missing {}", path.display())));
            continue;
        }
        let boxes = read_slice_boxes(&path)?;
        if boxes.is_empty() {
            skipped.push((r.id.clone(), "no boxes".into()));
            continue;
        }
        vois.insert(r.id.clone(), merge_slices(&boxes)?);
    }
    create_dir(&a.out)?;
    write_vois(&a.out.join("vois.csv"), vois.iter().map(|(k, v)| (k.as_str(), v)))?;
    let skipped_path = a.out.join("skipped.csv");
    let mut w = csv::Writer::from_path(&skipped_path).map_err(|e| crate::error::csv_error(&skipped_path, e))?;
    w.write_record(["id", "reason"]).map_err(|e| crate::error::csv_error(&skipped_path, e))?;
    for (id, reason) in &skipped {
        w.write_record([id, reason]).map_err(|e| crate::error::csv_error(&skipped_path, e))?;
    }
    w.flush().map_err(|e| AppError::io(&skipped_path, e))?;
    let mut cfg = RunConfig::new("detect-merge", 0, &a.out);
    cfg.manifest = Some(path_string(&a.manifest));
    cfg.boxes_dir = a.boxes_dir.as_deref().map(path_string);
    write_json(&a.out.join(RUN_CONFIG_FILE), &cfg)?;
    Ok(Outcome::DetectMerge {
        merged: vois.len(),
        skipped: skipped.into_iter().map(|(id, _)| id).collect(),
    })
}

fn load_vois(path: Option<&Path>) -> Result<Option<BTreeMap<String, Box3D>>> {
    path.map(crate::boxes::read_vois).transpose()
}

fn run_crossval(a: &CrossvalArgs) -> Result<Outcome> {
    let preprocess = a.preprocess.resolve(32);
    let network = NetworkConfig {
        input_side: preprocess.side,
        stage1_channels: a.train.channels,
        block_channels: a.train.channels,
        activation: a.train.activation.into(),
        ..NetworkConfig::default()
    };
    let optimizer = OptimizerConfig {
        learning_rate: a.train.lr,
        batch_size: a.train.batch,
        epochs: a.train.epochs,
        ..OptimizerConfig::default()
    };
    network.validate()?;
    optimizer.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    let vois = load_vois(a.vois.as_deref())?;
    let subjects = prepare_cohort(&manifest, vois.as_ref(), &preprocess)?;
    let settings = CrossvalSettings {
        folds: a.folds,
        network,
        optimizer,
        seed: a.seed,
    };
    let results = crossval(&subjects, &settings, |fold, epoch, loss| {
        if epoch + 1 == optimizer.epochs {
            eprintln!("fold {fold}: final epoch mean loss {loss:.6}");
        }
    })?;

    create_dir(&a.out.join("checkpoints"))?;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for r in &results {
        save_checkpoint(&a.out.join(format!("checkpoints/fold{}.ckpt", r.fold_index)), &r.checkpoint)?;
        rows.extend(r.predictions.iter().map(|p| PredictionRow {
            fold: r.fold_index.to_string(),
            record: p.clone(),
        }));
        traces.push((r.fold_index, r.epoch_losses.clone()));
    }
    write_loss_trace(&a.out.join("loss_trace.csv"), &traces)?;
    let summary = write_report(&a.out, &rows, a.seed)?;

    let mut cfg = RunConfig::new("crossval", a.seed, &a.out);
    cfg.k_folds = Some(a.folds);
    cfg.manifest = Some(path_string(&a.manifest));
    cfg.vois = a.vois.as_deref().map(path_string);
    cfg.preprocess = Some(preprocess);
    cfg.network = Some(network);
    cfg.optimizer = Some(optimizer);
    write_json(&a.out.join(RUN_CONFIG_FILE), &cfg)?;
    Ok(Outcome::Report(summary))
}

fn eval(a: &EvalArgs) -> Result<Outcome> {
    let checkpoint = load_checkpoint(&a.checkpoint)?;
    let preprocess = a.preprocess.resolve(checkpoint.state.config.input_side);
    if preprocess.side != checkpoint.state.config.input_side {
        return Err(AppError::Validation(format!(
            "--side {} does not match the checkpoint input side {}",
            preprocess.side, checkpoint.state.config.input_side
        )));
    }
    let manifest = load_manifest(&a.manifest)?;
    let vois = load_vois(a.vois.as_deref())?;
    let subjects = prepare_cohort(&manifest, vois.as_ref(), &preprocess)?;
    let rows: Vec<PredictionRow> = predict(&checkpoint.state, &subjects)?
        .into_iter()
        .map(|record| PredictionRow {
            fold: EXTERNAL_FOLD.into(),
            record,
        })
        .collect();
    create_dir(&a.out)?;
    let summary = write_report(&a.out, &rows, a.seed)?;
    let mut cfg = RunConfig::new("eval", a.seed, &a.out);
    cfg.manifest = Some(path_string(&a.manifest));
    cfg.vois = a.vois.as_deref().map(path_string);
    cfg.checkpoint = Some(path_string(&a.checkpoint));
    cfg.preprocess = Some(preprocess);
    cfg.network = Some(checkpoint.state.config);
    cfg.optimizer = Some(checkpoint.optimizer);
    write_json(&a.out.join(RUN_CONFIG_FILE), &cfg)?;
    Ok(Outcome::Report(summary))
}

fn report(a: &ReportArgs) -> Result<Outcome> {
    let cfg_path = a.out.join(RUN_CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| AppError::io(&cfg_path, e))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| AppError::invalid(&cfg_path, e))?;
    let rows = read_predictions(&a.out.join(crate::report::PREDICTIONS_FILE))?;
    Ok(Outcome::Report(write_report(&a.out, &rows, cfg.seed)?))
}
