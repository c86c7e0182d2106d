//! The `emi` command line: synthesize data, train a branch, predict,
//! evaluate and fuse.
//!
//! [`run`] executes one parsed command and returns the text it prints, so
//! tests can drive the pipeline in-process.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use emi_core::data::{
    generate_synthetic_dataset, DataError, Manifest, Split, SplitData, SynthSpec,
};
use emi_core::fusion::{
    late_fuse, read_predictions, weighted_fuse, write_predictions, FusionError, PredictionRecord,
    Source,
};
use emi_core::metrics::{mean_rho, MetricsError};
use emi_core::model::{Branch, BranchModel, ModelConfig, ModelError};
use emi_core::train::{
    format_log, predict_split, Checkpoint, StopReason, TrainConfig, TrainError, Trainer,
};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const EPOCH_LOG: &str = "epochs.csv";
pub const MODEL_SUMMARY: &str = "model.txt";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const VALIDATION_REPORT: &str = "validation_report";
pub const EVAL_REPORT: &str = "report";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("prediction ids differ from the {split} split: {}", ids.join(", "))]
    IdMismatch { split: Split, ids: Vec<String> },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Model and optimizer settings read from a TOML file with `[model]` and
/// `[train]` tables. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Small models and short sequences for synthetic data.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
        }
    }

    pub fn paper() -> Self {
        Self {
            model: ModelConfig::paper(),
            train: TrainConfig::paper(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.model.validate().map_err(|e| e.to_string())?;
        cfg.train.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        Self::from_toml(&text).map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Uses `seed` for both initialization and batch shuffling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.train.seed = seed;
        self
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "emi",
    version,
    about = "Emotional mimicry intensity regression pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset: feature files plus manifest.csv.
    Synth(SynthArgs),
    /// Train one branch and write checkpoints, the epoch log and a validation report.
    Train(TrainArgs),
    /// Write per-sample predictions of a checkpoint on one split.
    Predict(PredictArgs),
    /// Score a prediction file against manifest labels.
    Eval(EvalArgs),
    /// Average visual and audio prediction files.
    Fuse(FuseArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Planted signal strength in [0, 1]; 0 makes labels independent of features.
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 32)]
    pub n_train: usize,
    #[arg(long, default_value_t = 16)]
    pub n_val: usize,
    #[arg(long, default_value_t = 16)]
    pub n_test: usize,
    /// Shortest raw sequence length.
    #[arg(long, default_value_t = 16)]
    pub min_len: usize,
    /// Longest raw sequence length.
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Branch to train.
    #[arg(long)]
    pub modality: Branch,
    #[arg(long)]
    pub manifest: PathBuf,
    /// TOML file with [model] and [train] tables; defaults to the desk settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the model and shuffling seeds from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides train.max_epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides train.lr.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Overrides train.batch_size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Continue from the checkpoints already in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction CSV written by `predict` or `fuse`.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Output directory for report.txt and report.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub visual: PathBuf,
    #[arg(long)]
    pub audio: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
    /// Visual and audio weights summing to 1, e.g. `0.6,0.4`; default is the plain mean.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
}

/// Executes one command and returns its standard output.
pub fn run(command: Command) -> Result<String, CliError> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Fuse(a) => fuse(a),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, S>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli.command)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn synth(a: SynthArgs) -> Result<String, CliError> {
    if !(0.0..=1.0).contains(&a.signal) {
        return Err(CliError::Usage(format!(
            "--signal must lie in [0, 1], got {}",
            a.signal
        )));
    }
    let spec = SynthSpec {
        n_train: a.n_train,
        n_validation: a.n_val,
        n_test: a.n_test,
        seed: a.seed,
        signal: a.signal,
        min_len: a.min_len,
        max_len: a.max_len,
    };
    let manifest = generate_synthetic_dataset(&spec, &a.out)?;
    let mut out = String::from("split,samples\n");
    for (split, n) in Split::ALL.iter().zip(manifest.counts()) {
        writeln!(out, "{split},{n}").unwrap();
    }
    writeln!(out, "total,{}", manifest.len()).unwrap();
    Ok(out)
}

fn train(a: TrainArgs) -> Result<String, CliError> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::desk(),
    };
    if let Some(seed) = a.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.train.validate()?;

    let manifest = Manifest::load(&a.manifest)?;
    let (vlen, alen) = (cfg.model.max_visual_len, cfg.model.max_audio_len);
    let train_data = SplitData::load(&manifest, Split::Train, vlen, alen)?;
    let val_data = SplitData::load(&manifest, Split::Validation, vlen, alen)?;

    create_dir(&a.out)?;
    let last_path = a.out.join(LAST_CHECKPOINT);
    let best_path = a.out.join(BEST_CHECKPOINT);
    let trainer = if a.resume {
        let mut last = Checkpoint::<f32>::load(&last_path)?;
        if last.branch != a.modality {
            return Err(CliError::Usage(format!(
                "{} holds a {} model, --modality is {}",
                last_path.display(),
                last.branch,
                a.modality
            )));
        }
        let best = best_path
            .exists()
            .then(|| Checkpoint::<f32>::load(&best_path))
            .transpose()?;
        if let Some(e) = a.epochs {
            last.train_config.max_epochs = e;
        }
        Trainer::resume(last, best)?
    } else {
        let model = BranchModel::<f32>::new(&cfg.model, a.modality)?;
        Trainer::new(model, cfg.train.clone())?
    };
    write_file(&a.out.join(MODEL_SUMMARY), trainer.model().describe())?;
    write_file(&a.out.join(RESOLVED_CONFIG), cfg.to_toml())?;

    let log_path = a.out.join(EPOCH_LOG);
    let outcome = trainer.run_with(&train_data, &val_data, |t, _| {
        fs::write(&log_path, format_log(t.log())).map_err(|source| TrainError::Io {
            path: log_path.clone(),
            source,
        })
    })?;
    write_file(&log_path, format_log(&outcome.log))?;
    outcome.last.save(&last_path)?;
    outcome.best.save(&best_path)?;

    let best_model = outcome.best.model()?;
    let report = emi_core::train::evaluate(&best_model, &val_data)?;
    write_file(
        &a.out.join(format!("{VALIDATION_REPORT}.txt")),
        report.to_text(),
    )?;
    write_file(
        &a.out.join(format!("{VALIDATION_REPORT}.csv")),
        report.to_csv(),
    )?;

    let stop = match outcome.stop {
        StopReason::MaxEpochs => "max_epochs".to_string(),
        StopReason::LrFloor => "lr_floor".to_string(),
        StopReason::NonFinite { epoch } => format!("non_finite_at_epoch_{epoch}"),
    };
    let mut out = String::new();
    writeln!(out, "modality={}", a.modality).unwrap();
    writeln!(out, "epochs={}", outcome.last.epoch).unwrap();
    writeln!(out, "best_epoch={}", outcome.best.epoch).unwrap();
    writeln!(out, "best_val_mean_rho={}", report.mean_rho).unwrap();
    writeln!(out, "stop={stop}").unwrap();
    Ok(out)
}

fn predict(a: PredictArgs) -> Result<String, CliError> {
    let ck = Checkpoint::<f32>::load(&a.checkpoint)?;
    let model = ck.model()?;
    let manifest = Manifest::load(&a.manifest)?;
    let data = SplitData::load(
        &manifest,
        a.split,
        ck.model_config.max_visual_len,
        ck.model_config.max_audio_len,
    )?;
    let source = match ck.branch {
        Branch::Visual => Source::Visual,
        Branch::Audio => Source::Audio,
    };
    let records: Vec<PredictionRecord> = predict_split(&model, &data)?
        .into_iter()
        .zip(&data.samples)
        .map(|(values, s)| PredictionRecord {
            sample_id: s.sample_id.clone(),
            source,
            values,
        })
        .collect();
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_predictions(&a.out, source, &records)?;
    Ok(format!(
        "wrote {} {} predictions for the {} split to {}\n",
        records.len(),
        source,
        a.split,
        a.out.display()
    ))
}

fn eval(a: EvalArgs) -> Result<String, CliError> {
    let (_, records) = read_predictions(&a.predictions)?;
    let manifest = Manifest::parse(
        &read_text(&a.manifest)?,
        a.manifest.parent().unwrap_or(Path::new(".")),
    )?;
    let rows = manifest.split(a.split);
    if rows.is_empty() {
        return Err(DataError::EmptySplit(a.split).into());
    }
    let predicted: BTreeSet<&str> = records.iter().map(|r| r.sample_id.as_str()).collect();
    let expected: BTreeSet<&str> = rows.iter().map(|r| r.sample_id.as_str()).collect();
    let mut ids: Vec<String> = predicted
        .symmetric_difference(&expected)
        .map(|s| s.to_string())
        .collect();
    if predicted.len() != records.len() {
        let mut seen = BTreeSet::new();
        ids.extend(
            records
                .iter()
                .filter(|r| !seen.insert(r.sample_id.as_str()))
                .map(|r| format!("{} (duplicate)", r.sample_id)),
        );
    }
    if !ids.is_empty() {
        return Err(CliError::IdMismatch {
            split: a.split,
            ids,
        });
    }
    let labels: Vec<[f64; 6]> = records
        .iter()
        .map(|r| {
            *manifest
                .get(&r.sample_id)
                .expect("id checked")
                .labels
                .values()
        })
        .collect();
    let preds: Vec<[f64; 6]> = records.iter().map(|r| r.values).collect();
    let report = mean_rho(&labels, &preds)?;

    let mut text = report.to_text();
    for name in report.warnings() {
        writeln!(text, "warning=zero variance in {name}; rho set to 0").unwrap();
    }
    write_file(&a.out.join(format!("{EVAL_REPORT}.txt")), &text)?;
    write_file(&a.out.join(format!("{EVAL_REPORT}.csv")), report.to_csv())?;
    Ok(text)
}

fn fuse(a: FuseArgs) -> Result<String, CliError> {
    let (vs, visual) = read_predictions(&a.visual)?;
    let (as_, audio) = read_predictions(&a.audio)?;
    let fused = match a.weights.as_deref() {
        None => late_fuse(&visual, &audio)?,
        Some(&[wv, wa]) => weighted_fuse(&visual, &audio, wv, wa)?,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "--weights takes two values, got {}",
                other.len()
            )))
        }
    };
    write_file(
        &a.out,
        emi_core::fusion::format_predictions(Source::Fused, &fused),
    )?;
    Ok(format!(
        "fused {} {vs} and {as_} predictions into {}\n",
        fused.len(),
        a.out.display()
    ))
}
