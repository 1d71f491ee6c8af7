//! `sss`: synthesize data, train, evaluate, predict, and export heatmaps.
//!
//! One JSON config document drives everything; `--set key=value` patches
//! it by dotted path and the three named seeds have dedicated flags.
//! Exit codes: 0 success, 1 missing input, 2 config error, 3 numeric
//! failure, 4 compatibility error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sss_core::backbone::{BackboneConfig, PatchMlpBackbone};
use sss_core::ingest::synth::{synthesize, write_bursts_csv, SynthConfig};
use sss_core::ingest::{
    balance_classes, load_dataset, preprocess, split_dataset, write_series_csv, DatasetManifest,
    ManifestEntry, PreprocessConfig,
};
use sss_core::pipeline::{
    evaluate, heatmap, heatmap_raw, load_checkpoint, predict_series, save_checkpoint, train,
    write_heatmap_csv, write_heatmap_pgm, write_history_csv, CheckpointMeta, TrainConfig,
};
use sss_core::{num_classes, Error as CoreError, SeriesRecord, Split};

#[derive(Parser)]
#[command(name = "sss", version, about = "Window-sampling time series classifier")]
struct Cli {
    /// JSON config file; defaults apply when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override a config value by dotted path, e.g. --set train.epochs=5
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Seed for synthesis, balancing, and splitting
    #[arg(long, global = true, value_name = "INT")]
    seed_data: Option<u64>,

    /// Seed for model weight initialization
    #[arg(long, global = true, value_name = "INT")]
    seed_init: Option<u64>,

    /// Seed for epoch shuffling
    #[arg(long, global = true, value_name = "INT")]
    seed_sampler: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into the data directory
    Synth {
        /// Output directory; defaults to the config's data_dir
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train a model, writing a checkpoint and history.csv
    Train {
        /// Shortcut for --set train.epochs=N
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// Checkpoint path; defaults to <out_dir>/model.ckpt
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split, metrics JSON to stdout
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// train, val, or test
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Full-coverage prediction for one series, JSON to stdout
    Predict {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "ID")]
        id: String,
    },
    /// Export a series heatmap as CSV and PGM
    Heatmap {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "ID")]
        id: String,
        /// Bin width in samples; defaults to the inference stride
        #[arg(long, value_name = "N")]
        bin_width: Option<usize>,
        /// Average raw window probabilities instead of calibrated ones
        #[arg(long)]
        raw: bool,
        /// Output stem; writes <stem>.csv and <stem>.pgm
        #[arg(long, value_name = "PATH")]
        out_stem: Option<PathBuf>,
    },
}

/// The whole run in one document.
///
/// `seed_data` takes precedence over `synth.seed`, so the data seed has a
/// single authoritative home. The preprocessing default skips pooling:
/// the synthetic bursts oscillate at periods a kernel-24 average would
/// cancel out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    data_dir: PathBuf,
    out_dir: PathBuf,
    seed_data: u64,
    synth: SynthConfig,
    preprocess: PreprocessConfig,
    backbone: BackboneConfig,
    train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data/synth"),
            out_dir: PathBuf::from("out"),
            seed_data: 42,
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig {
                downsample_kernel: 1,
                downsample_stride: 1,
                ..PreprocessConfig::default()
            },
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.preprocess.validate()?;
        self.backbone.validate()?;
        self.train.validate()?;
        if self.backbone.window_len != self.train.window_len {
            return Err(config_error(format!(
                "backbone.window_len ({}) must match train.window_len ({})",
                self.backbone.window_len, self.train.window_len
            )));
        }
        Ok(())
    }

    fn checkpoint_path(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }
}

/// Error carrying an explicit exit code.
#[derive(Debug)]
struct ExitWith {
    code: u8,
    message: String,
}

impl std::fmt::Display for ExitWith {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ExitWith {}

fn config_error(message: String) -> anyhow::Error {
    ExitWith { code: 2, message }.into()
}

fn code_for(err: &CoreError) -> u8 {
    use CoreError::*;
    match err {
        Io { .. } | EmptySeries { .. } | EmptyDataset | UnknownSeries(_) | DanglingRef { .. }
        | DuplicateId(_) | MissingClass(_) => 1,
        InvalidConfig(_) | InvalidManifest(_) | Parse { .. } | InvalidWeights(_)
        | InvalidSeries { .. } | Stratification { .. } | Packing { .. }
        | SeriesTooShort { .. } | InvalidBinWidth | EmptyCalibration
        | CalibratorNeedsBinary(_) | UndefinedMetric(_) => 2,
        InvalidProbability(_) | NonFiniteGradient { .. } | EmptyAggregation => 3,
        Incompatible { .. } | CorruptCheckpoint(_) | DimensionMismatch(_) => 4,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(exit) = cause.downcast_ref::<ExitWith>() {
            return exit.code;
        }
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return code_for(core);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Synth { out } => cmd_synth(&config, out.as_deref()),
        Command::Train { epochs, checkpoint } => cmd_train(&config, *epochs, checkpoint),
        Command::Eval { checkpoint, split } => cmd_eval(&config, checkpoint, split),
        Command::Predict { checkpoint, id } => cmd_predict(&config, checkpoint, id),
        Command::Heatmap {
            checkpoint,
            id,
            bin_width,
            raw,
            out_stem,
        } => cmd_heatmap(&config, checkpoint, id, *bin_width, *raw, out_stem.as_deref()),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut doc: Value = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| config_error(format!("config {}: {e}", path.display())))?
        }
        None => serde_json::to_value(RunConfig::default()).expect("default config serializes"),
    };

    for entry in &cli.set {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| config_error(format!("--set needs KEY=VALUE, got {entry:?}")))?;
        apply_override(&mut doc, key, value)?;
    }

    let mut config: RunConfig = serde_json::from_value(doc)
        .map_err(|e| config_error(format!("invalid config: {e}")))?;
    if let Some(seed) = cli.seed_data {
        config.seed_data = seed;
    }
    if let Some(seed) = cli.seed_init {
        config.train.seed_init = seed;
    }
    if let Some(seed) = cli.seed_sampler {
        config.train.seed_sampler = seed;
    }
    config.validate()?;
    Ok(config)
}

/// Sets `doc[a][b][c] = value` for a dotted path `a.b.c`. The value is
/// parsed as JSON when possible and falls back to a plain string, so both
/// `--set train.epochs=5` and `--set data_dir=runs/x` read naturally.
fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let parsed: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut node = doc;
    let mut segments = path.split('.').peekable();
    while let Some(segment) = segments.next() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| config_error(format!("--set {path}: {segment} is not an object")))?;
        if segments.peek().is_none() {
            map.insert(segment.to_string(), parsed);
            return Ok(());
        }
        node = map
            .entry(segment.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(config_error(format!("--set: empty key in {path:?}")))
}

fn cmd_synth(config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let out_dir = out.unwrap_or(&config.data_dir);
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let synth_config = SynthConfig {
        seed: config.seed_data,
        ..config.synth.clone()
    };
    let (records, bursts) = synthesize(&synth_config)?;

    let mut entries = Vec::with_capacity(records.len());
    for record in &records {
        let filename = format!("{}.csv", record.id);
        write_series_csv(&out_dir.join(&filename), &record.values)?;
        entries.push(ManifestEntry {
            path: PathBuf::from(filename),
            id: record.id.clone(),
            label: record.label,
            split: None,
        });
    }
    let manifest = DatasetManifest::new(out_dir.to_path_buf(), entries)?;
    manifest.write_csv(&out_dir.join("manifest.csv"))?;
    write_bursts_csv(&out_dir.join("bursts.csv"), &bursts)?;
    println!(
        "wrote {} series ({} burst intervals) to {}",
        records.len(),
        bursts.len(),
        out_dir.display()
    );
    Ok(())
}

/// Loads, preprocesses, optionally balances, and splits the dataset.
fn prepared_dataset(config: &RunConfig) -> Result<Vec<SeriesRecord>> {
    let manifest = DatasetManifest::from_csv(&config.data_dir.join("manifest.csv"))?;
    let mut records = load_dataset(&manifest)?;
    records = preprocess(records, &config.preprocess)?;
    if config.preprocess.balance_classes {
        records = balance_classes(records, config.seed_data)?;
    }
    split_dataset(records, config.preprocess.split_fractions, config.seed_data)
        .map_err(Into::into)
}

fn by_split(records: &[SeriesRecord], split: Split) -> Vec<SeriesRecord> {
    records
        .iter()
        .filter(|r| r.split == Some(split))
        .cloned()
        .collect()
}

/// Exit-4 check that a checkpoint's dimensions fit the dataset.
fn check_compatibility(backbone: &BackboneConfig, records: &[SeriesRecord]) -> Result<()> {
    let channels = records.first().map_or(0, |r| r.channels());
    if channels != backbone.channels {
        return Err(CoreError::Incompatible {
            field: "channels".into(),
            expected: backbone.channels.to_string(),
            actual: channels.to_string(),
        }
        .into());
    }
    let k = num_classes(records)?;
    if k != backbone.num_classes {
        return Err(CoreError::Incompatible {
            field: "num_classes".into(),
            expected: backbone.num_classes.to_string(),
            actual: k.to_string(),
        }
        .into());
    }
    Ok(())
}

fn cmd_train(
    config: &RunConfig,
    epochs: Option<usize>,
    checkpoint: &Option<PathBuf>,
) -> Result<()> {
    let mut train_config = config.train;
    if let Some(epochs) = epochs {
        train_config.epochs = epochs;
        train_config.validate()?;
    }
    let records = prepared_dataset(config)?;
    check_compatibility(&config.backbone, &records)?;
    let train_set = by_split(&records, Split::Train);
    let val_set = by_split(&records, Split::Val);

    let model = PatchMlpBackbone::new(config.backbone, train_config.seed_init)?;
    let outcome = train(model, &train_set, &val_set, &train_config)?;

    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating output directory {}", config.out_dir.display()))?;
    write_history_csv(&outcome.history, &config.out_dir.join("history.csv"))?;
    let best_val_f1 = outcome
        .history
        .iter()
        .find(|s| s.epoch == outcome.best_epoch)
        .map_or(0.0, |s| s.val_f1);
    let meta = CheckpointMeta {
        backbone: config.backbone,
        train: train_config,
        calibrator: outcome.calibrator,
        best_epoch: outcome.best_epoch,
        best_val_f1,
    };
    let checkpoint_path = config.checkpoint_path(checkpoint);
    save_checkpoint(&outcome.model, &meta, &checkpoint_path)?;

    if outcome.diverged {
        let epochs_done = outcome.history.len();
        return Err(ExitWith {
            code: 3,
            message: format!(
                "training diverged (non-finite loss or gradient) after {epochs_done} completed \
                 epoch(s); wrote the best checkpoint so far to {}",
                checkpoint_path.display()
            ),
        }
        .into());
    }
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": checkpoint_path,
            "epochs_run": outcome.history.len(),
            "best_epoch": outcome.best_epoch,
            "best_val_f1": best_val_f1,
        })
    );
    Ok(())
}

/// Loads the checkpoint pair and the matching prepared dataset.
fn load_for_inference(
    config: &RunConfig,
    checkpoint: &Option<PathBuf>,
) -> Result<(PatchMlpBackbone, CheckpointMeta, Vec<SeriesRecord>)> {
    let (model, meta) = load_checkpoint(&config.checkpoint_path(checkpoint))?;
    let records = prepared_dataset(config)?;
    check_compatibility(&model.config, &records)?;
    Ok((model, meta, records))
}

fn cmd_eval(config: &RunConfig, checkpoint: &Option<PathBuf>, split: &str) -> Result<()> {
    let split = Split::parse(split)?;
    let (model, meta, records) = load_for_inference(config, checkpoint)?;
    let subset = by_split(&records, split);
    let report = evaluate(
        &model,
        &meta.calibrator,
        &subset,
        meta.train.inference_spec(),
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn find_series<'a>(records: &'a [SeriesRecord], id: &str) -> Result<&'a SeriesRecord> {
    records
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| CoreError::UnknownSeries(id.to_string()).into())
}

fn cmd_predict(config: &RunConfig, checkpoint: &Option<PathBuf>, id: &str) -> Result<()> {
    let (model, meta, records) = load_for_inference(config, checkpoint)?;
    let record = find_series(&records, id)?;
    let prediction = predict_series(&model, &meta.calibrator, record, meta.train.inference_spec())?;
    println!("{}", serde_json::to_string_pretty(&prediction)?);
    Ok(())
}

fn cmd_heatmap(
    config: &RunConfig,
    checkpoint: &Option<PathBuf>,
    id: &str,
    bin_width: Option<usize>,
    raw: bool,
    out_stem: Option<&Path>,
) -> Result<()> {
    let (model, meta, records) = load_for_inference(config, checkpoint)?;
    let record = find_series(&records, id)?;
    let prediction = predict_series(&model, &meta.calibrator, record, meta.train.inference_spec())?;
    let bin_width = bin_width.unwrap_or(meta.train.inference_stride);
    let map = if raw {
        heatmap_raw(&prediction, bin_width)?
    } else {
        heatmap(&prediction, bin_width)?
    };

    let default_stem = config.out_dir.join(format!("heatmap-{id}"));
    let stem = out_stem.unwrap_or(&default_stem);
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating output directory {}", parent.display()))?;
        }
    }
    let csv_path = stem.with_extension("csv");
    let pgm_path = stem.with_extension("pgm");
    write_heatmap_csv(&map, &csv_path)?;
    write_heatmap_pgm(&map, &pgm_path)?;
    println!(
        "{}",
        serde_json::json!({
            "series_id": id,
            "bins": map.bins.len(),
            "csv": csv_path,
            "pgm": pgm_path,
        })
    );
    Ok(())
}
