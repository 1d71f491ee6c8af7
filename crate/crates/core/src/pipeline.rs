//! Orchestration: the training loop, full-coverage inference over a
//! series, evaluation, and probability heatmaps.
//!
//! Training and inference share one aggregation path ([`aggregate`] with
//! mean weights); calibration slots in per window at inference time only.
//! The pipeline is binary-classification-only end to end because the
//! early-stop metric (validation F1 at threshold 0.5) and the calibrators
//! are; the backbone itself supports any K.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{
    loss_and_grad, AdamConfig, AdamState, BackboneConfig, LocalModel, PatchMlpBackbone,
    SeriesGroup,
};
use crate::calibrate::{fit_calibrator, Calibrator, CalibratorKind};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, auc, f1_score, ConfusionCounts};
use crate::prob::{aggregate, mean_weights, ProbVector};
use crate::sampling::{build_pool, materialize_from, EpochSampler, WindowRef, WindowSpec};
use crate::seed;
use crate::series::SeriesRecord;

/// Everything the training loop needs beyond the model itself.
///
/// `optimizer.epochs` (the cosine horizon) is overridden with `epochs`
/// when training starts, so the schedule always spans the actual run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub window_len: usize,
    pub train_stride: usize,
    /// Stride for full-coverage inference (validation, test, heatmaps).
    pub inference_stride: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a validation-F1 improvement before stopping.
    pub patience: usize,
    pub optimizer: AdamConfig,
    pub calibrator: CalibratorKind,
    pub seed_init: u64,
    pub seed_sampler: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_len: 256,
            train_stride: 64,
            inference_stride: 64,
            batch_size: 64,
            epochs: 50,
            patience: 15,
            optimizer: AdamConfig::default(),
            calibrator: CalibratorKind::Isotonic,
            seed_init: 1,
            seed_sampler: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        WindowSpec::new(self.window_len, self.train_stride)?;
        WindowSpec::new(self.window_len, self.inference_stride)?;
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        self.scheduled_optimizer().validate()
    }

    pub fn train_spec(&self) -> WindowSpec {
        WindowSpec {
            window_len: self.window_len,
            stride: self.train_stride,
        }
    }

    pub fn inference_spec(&self) -> WindowSpec {
        WindowSpec {
            window_len: self.window_len,
            stride: self.inference_stride,
        }
    }

    fn scheduled_optimizer(&self) -> AdamConfig {
        AdamConfig {
            epochs: self.epochs,
            ..self.optimizer
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub val_auc: Option<f64>,
    pub val_acc: f64,
    pub lr: f64,
}

/// What training hands back: the best-epoch model, its calibrator, and
/// the per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub calibrator: Calibrator,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    /// True when a non-finite loss or gradient cut training short; the
    /// model is then the last one that evaluated best before the blowup.
    pub diverged: bool,
}

/// Trains the model: per epoch, a fresh without-replacement sampler walks
/// the window pool in batches, each batch's windows are grouped by parent
/// series, aggregated, and scored against the series labels, and one
/// optimizer step follows per batch. Validation F1 (threshold 0.5, raw
/// probabilities) drives early stopping; the best epoch's weights win.
/// The calibrator is fit last, on validation windows at inference stride.
pub fn train<M: LocalModel + Clone>(
    model: M,
    train_records: &[SeriesRecord],
    val_records: &[SeriesRecord],
    config: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    config.validate()?;
    if train_records.is_empty() || val_records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if model.num_classes() != 2 {
        return Err(Error::InvalidConfig(format!(
            "training early-stops on binary F1; got {} classes",
            model.num_classes()
        )));
    }
    let mut model = model;
    let pool = build_pool(train_records, config.train_spec())?;
    let index: HashMap<&str, &SeriesRecord> = train_records
        .iter()
        .map(|r| (r.id.as_str(), r))
        .collect();
    let optimizer = config.scheduled_optimizer();
    let mut adam = AdamState::new(model.params().len(), optimizer)?;

    let mut best_model = model.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs_since_best = 0;
    let mut history = Vec::new();
    let mut diverged = false;

    'epochs: for epoch in 0..config.epochs {
        let epoch_seed = seed::derive(config.seed_sampler, "epoch", epoch as u64);
        let mut sampler = EpochSampler::new(&pool, config.batch_size, epoch_seed)?;
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        while let Some(batch) = sampler.next_batch(&pool) {
            let groups = group_batch(&batch, &index, config.window_len)?;
            // past this point a non-finite loss, gradient, probability, or
            // parameter all mean the same thing: the run blew up, keep the
            // best weights seen so far
            let (loss, grad) = match loss_and_grad(&model, &groups) {
                Ok(pair) => pair,
                Err(Error::InvalidProbability(_)) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                diverged = true;
                break 'epochs;
            }
            match adam.step(model.params_mut(), &grad, epoch) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { .. }) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            if model.params().iter().any(|p| !p.is_finite()) {
                diverged = true;
                break 'epochs;
            }
            loss_sum += loss;
            batches += 1;
        }

        let report =
            match evaluate(&model, &Calibrator::None, val_records, config.inference_spec()) {
                Ok(report) => report,
                Err(Error::InvalidProbability(_)) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
        let val_f1 = report.f1.unwrap_or(0.0);
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_f1,
            val_auc: report.auc,
            val_acc: report.accuracy,
            lr: optimizer.lr_at(epoch),
        });

        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_model = model.clone();
            best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                break;
            }
        }
    }

    let model = best_model;
    let calibrator = if diverged {
        Calibrator::None
    } else {
        fit_calibrator(config.calibrator, &model, val_records, config.inference_spec())?
    };
    Ok(TrainOutcome {
        model,
        calibrator,
        history,
        best_epoch,
        diverged,
    })
}

/// Batch windows grouped by parent series in first-appearance order.
fn group_batch(
    batch: &[&WindowRef],
    index: &HashMap<&str, &SeriesRecord>,
    window_len: usize,
) -> Result<Vec<SeriesGroup>> {
    let mut groups: Vec<SeriesGroup> = Vec::new();
    let mut positions: HashMap<&str, usize> = HashMap::new();
    for window in batch {
        let record = index
            .get(window.series_id.as_str())
            .ok_or_else(|| Error::DanglingRef {
                id: window.series_id.clone(),
                offset: window.offset,
            })?;
        let values = materialize_from(window, record, window_len)?;
        match positions.get(window.series_id.as_str()) {
            Some(&pos) => groups[pos].windows.push(values),
            None => {
                positions.insert(record.id.as_str(), groups.len());
                groups.push(SeriesGroup {
                    label: record.label,
                    windows: vec![values],
                });
            }
        }
    }
    Ok(groups)
}

/// One window's raw and calibrated outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub offset: usize,
    pub raw: ProbVector,
    pub calibrated: ProbVector,
}

/// Full-coverage prediction for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPrediction {
    pub series_id: String,
    pub series_len: usize,
    pub window_len: usize,
    /// Mean of the calibrated per-window vectors.
    pub final_probs: ProbVector,
    pub windows: Vec<WindowPrediction>,
}

impl SeriesPrediction {
    /// Positive-class probability of the aggregated prediction.
    pub fn positive(&self) -> f64 {
        self.final_probs.probs()[1]
    }
}

/// Scores every window of the series at the spec's stride, calibrates
/// each window, and mean-aggregates into the final prediction. Series
/// shorter than the window contribute their single zero-padded window.
pub fn predict_series<M: LocalModel>(
    model: &M,
    calibrator: &Calibrator,
    record: &SeriesRecord,
    spec: WindowSpec,
) -> Result<SeriesPrediction> {
    let mut windows = Vec::with_capacity(spec.count_for(record.len()));
    for w in 0..spec.count_for(record.len()) {
        let window_ref = WindowRef {
            series_id: record.id.clone(),
            offset: w * spec.stride,
        };
        let values = materialize_from(&window_ref, record, spec.window_len)?;
        let (raw, _) = model.forward(&values)?;
        let calibrated = calibrator.calibrate(&raw)?;
        windows.push(WindowPrediction {
            offset: window_ref.offset,
            raw,
            calibrated,
        });
    }
    let outputs: Vec<ProbVector> = windows.iter().map(|w| w.calibrated.clone()).collect();
    let final_probs = aggregate(&outputs, &mean_weights(outputs.len())?)?;
    Ok(SeriesPrediction {
        series_id: record.id.clone(),
        series_len: record.len(),
        window_len: spec.window_len,
        final_probs,
        windows,
    })
}

/// Temporally averaged positive-class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub series_id: String,
    pub series_len: usize,
    /// Bin width in samples; the last bin may be ragged.
    pub bin_width: usize,
    /// One averaged probability per bin, ceil(T / bin_width) bins.
    pub bins: Vec<f64>,
}

/// Heatmap over the calibrated window probabilities (the same ones the
/// final prediction aggregates).
pub fn heatmap(prediction: &SeriesPrediction, bin_width: usize) -> Result<Heatmap> {
    build_heatmap(prediction, bin_width, |w| w.calibrated.probs()[1])
}

/// Heatmap over the raw (uncalibrated) window probabilities.
pub fn heatmap_raw(prediction: &SeriesPrediction, bin_width: usize) -> Result<Heatmap> {
    build_heatmap(prediction, bin_width, |w| w.raw.probs()[1])
}

fn build_heatmap(
    prediction: &SeriesPrediction,
    bin_width: usize,
    positive: impl Fn(&WindowPrediction) -> f64,
) -> Result<Heatmap> {
    if bin_width < 1 {
        return Err(Error::InvalidBinWidth);
    }
    if prediction.windows.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let t = prediction.series_len;
    let l = prediction.window_len;
    let num_bins = t.div_ceil(bin_width);
    let mut bins = vec![f64::NAN; num_bins];
    for b in 0..num_bins {
        let bin_start = b * bin_width;
        let bin_end = ((b + 1) * bin_width).min(t);
        let mut sum = 0.0;
        let mut count = 0usize;
        for window in &prediction.windows {
            // window spans [offset, offset + L), bin [bin_start, bin_end)
            if window.offset < bin_end && bin_start < window.offset + l {
                sum += positive(window);
                count += 1;
            }
        }
        if count > 0 {
            bins[b] = sum / count as f64;
        }
    }
    // bins no window touches (only possible in the tail past the last
    // window) inherit the nearest filled bin, ties toward the left
    let filled: Vec<usize> = (0..num_bins).filter(|&b| !bins[b].is_nan()).collect();
    for b in 0..num_bins {
        if bins[b].is_nan() {
            let nearest = *filled
                .iter()
                .min_by_key(|&&f| (f.abs_diff(b), f))
                .expect("every window intersects at least one bin");
            bins[b] = bins[nearest];
        }
    }
    Ok(Heatmap {
        series_id: prediction.series_id.clone(),
        series_len: t,
        bin_width,
        bins,
    })
}

/// Threshold-0.5 metrics over a split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// None when the split has no actual and no predicted positives.
    pub f1: Option<f64>,
    /// None when the split is single-class.
    pub auc: Option<f64>,
    /// Percentage in [0, 100].
    pub accuracy: f64,
    pub counts: ConfusionCounts,
    pub n: usize,
}

/// Runs full-coverage prediction over every record and scores the
/// aggregated positives at threshold 0.5.
pub fn evaluate<M: LocalModel>(
    model: &M,
    calibrator: &Calibrator,
    records: &[SeriesRecord],
    spec: WindowSpec,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if model.num_classes() != 2 {
        return Err(Error::InvalidConfig(format!(
            "evaluation thresholds the positive class; got {} classes",
            model.num_classes()
        )));
    }
    let mut scores = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut predictions = Vec::with_capacity(records.len());
    for record in records {
        let prediction = predict_series(model, calibrator, record, spec)?;
        let positive = prediction.positive();
        scores.push(positive);
        labels.push(record.label);
        predictions.push((positive >= 0.5) as usize);
    }
    let counts = ConfusionCounts::from_predictions(&predictions, &labels)?;
    let f1 = undefined_to_none(f1_score(&counts))?;
    let bool_labels: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    let auc = undefined_to_none(auc(&scores, &bool_labels))?;
    let accuracy = accuracy(&predictions, &labels)?;
    Ok(EvalReport {
        f1,
        auc,
        accuracy,
        counts,
        n: records.len(),
    })
}

fn undefined_to_none(result: Result<f64>) -> Result<Option<f64>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Writes the history as CSV with header
/// `epoch,train_loss,val_f1,val_auc,val_acc,lr`; an undefined validation
/// AUC leaves its field empty.
pub fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    for stats in history {
        writer.serialize(stats).map_err(|e| io_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

/// Writes `bin_start,bin_end,probability` rows; the bins tile [0, T)
/// exactly, so the last row's end is the series length.
pub fn write_heatmap_csv(heatmap: &Heatmap, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    writer
        .write_record(["bin_start", "bin_end", "probability"])
        .map_err(|e| io_error(path, e))?;
    for (b, prob) in heatmap.bins.iter().enumerate() {
        let start = b * heatmap.bin_width;
        let end = ((b + 1) * heatmap.bin_width).min(heatmap.series_len);
        writer
            .write_record([start.to_string(), end.to_string(), prob.to_string()])
            .map_err(|e| io_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

/// Renders the heatmap as a one-row 8-bit grayscale PGM (P5), pixel =
/// round(255 * probability).
pub fn write_heatmap_pgm(heatmap: &Heatmap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, bytes: &[u8]| {
        out.write_all(bytes).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    };
    write(&mut out, format!("P5\n{} 1\n255\n", heatmap.bins.len()).as_bytes())?;
    let pixels: Vec<u8> = heatmap
        .bins
        .iter()
        .map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    write(&mut out, &pixels)?;
    out.into_inner()
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e.into_error(),
        })?
        .sync_all()
        .ok();
    Ok(())
}

fn io_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io {
            path: path.display().to_string(),
            source: io,
        },
        other => Error::Parse {
            path: path.display().to_string(),
            row: 0,
            column: 0,
            reason: format!("{other:?}"),
        },
    }
}

/// Sidecar metadata stored next to the binary checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub calibrator: Calibrator,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

/// `<checkpoint>.json`, holding the [`CheckpointMeta`].
pub fn meta_path(checkpoint: &Path) -> PathBuf {
    let mut os = checkpoint.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Writes the binary checkpoint plus its JSON sidecar.
pub fn save_checkpoint(
    model: &PatchMlpBackbone,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    if meta.backbone != model.config {
        return Err(Error::Incompatible {
            field: "backbone".into(),
            expected: format!("{:?}", model.config),
            actual: format!("{:?}", meta.backbone),
        });
    }
    model.save(path)?;
    let sidecar = meta_path(path);
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::CorruptCheckpoint(format!("meta serialization: {e}")))?;
    std::fs::write(&sidecar, json).map_err(|e| Error::Io {
        path: sidecar.display().to_string(),
        source: e,
    })
}

/// Loads the checkpoint and sidecar, cross-checking their configs.
pub fn load_checkpoint(path: &Path) -> Result<(PatchMlpBackbone, CheckpointMeta)> {
    let model = PatchMlpBackbone::load(path)?;
    let sidecar = meta_path(path);
    let json = std::fs::read_to_string(&sidecar).map_err(|e| Error::Io {
        path: sidecar.display().to_string(),
        source: e,
    })?;
    let meta: CheckpointMeta = serde_json::from_str(&json)
        .map_err(|e| Error::CorruptCheckpoint(format!("sidecar {}: {e}", sidecar.display())))?;
    if meta.backbone != model.config {
        return Err(Error::CorruptCheckpoint(
            "sidecar backbone config disagrees with the binary checkpoint".into(),
        ));
    }
    Ok((model, meta))
}
