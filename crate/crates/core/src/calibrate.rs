//! Probability calibration: weighted isotonic regression (PAVA) and
//! Venn-Abers predictors, applied to window scores before inference-time
//! aggregation.
//!
//! Calibration is binary-only: it rescales the positive-class probability
//! and the complement follows. For more than two classes the calibrator
//! kind must be `None`.

use serde::{Deserialize, Serialize};

use crate::backbone::LocalModel;
use crate::error::{Error, Result};
use crate::prob::ProbVector;
use crate::sampling::{materialize_from, WindowRef, WindowSpec};
use crate::series::SeriesRecord;

/// Scored windows with labels inherited from their parent series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
    weights: Vec<f64>,
}

impl CalibrationSet {
    /// Unit weights.
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let weights = vec![1.0; scores.len()];
        CalibrationSet::with_weights(scores, labels, weights)
    }

    pub fn with_weights(scores: Vec<f64>, labels: Vec<u8>, weights: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        if scores.len() != labels.len() || scores.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores, {} labels, {} weights",
                scores.len(),
                labels.len(),
                weights.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidProbability(format!(
                "calibration score {s} outside [0, 1]"
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidProbability(format!(
                "calibration label {l} not in {{0, 1}}"
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::InvalidWeights(
                "calibration weights must be nonnegative with positive total".into(),
            ));
        }
        Ok(CalibrationSet {
            scores,
            labels,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn points(&self) -> Vec<(f64, f64, f64)> {
        self.scores
            .iter()
            .zip(&self.labels)
            .zip(&self.weights)
            .map(|((&s, &l), &w)| (s, l as f64, w))
            .collect()
    }

    /// Copy with one extra unit-weight point, used by Venn-Abers.
    fn augmented(&self, score: f64, label: u8) -> CalibrationSet {
        let mut scores = self.scores.clone();
        let mut labels = self.labels.clone();
        let mut weights = self.weights.clone();
        scores.push(score);
        labels.push(label);
        weights.push(1.0);
        CalibrationSet {
            scores,
            labels,
            weights,
        }
    }
}

/// Nondecreasing step function fit by PAVA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    /// Strictly increasing score thresholds (tied input scores pooled).
    pub breakpoints: Vec<f64>,
    /// Fitted values, nondecreasing, same length as `breakpoints`.
    pub values: Vec<f64>,
}

impl IsotonicModel {
    /// Value of the greatest breakpoint at or below `score`; queries below
    /// the first breakpoint return the first value.
    pub fn predict(&self, score: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|b| *b <= score);
        self.values[idx.saturating_sub(1)]
    }
}

/// Weighted isotonic regression over (score, target, weight) triples:
/// minimizes sum of w_i (fitted_i - target_i)^2 subject to fitted values
/// nondecreasing in score. Tied scores are pooled into a single weighted
/// point first, making the solution unique; zero-weight points impose no
/// constraint and are dropped.
pub fn isotonic_regression(points: &[(f64, f64, f64)]) -> Result<IsotonicModel> {
    let mut points: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|(_, _, w)| *w > 0.0)
        .copied()
        .collect();
    if points.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));

    // pool exact ties into weighted means
    let mut pooled: Vec<(f64, f64, f64)> = Vec::with_capacity(points.len());
    for (score, target, weight) in points {
        match pooled.last_mut() {
            Some((s, t, w)) if *s == score => {
                *t = (*t * *w + target * weight) / (*w + weight);
                *w += weight;
            }
            _ => pooled.push((score, target, weight)),
        }
    }

    // pool-adjacent-violators: merge backwards whenever a block mean
    // drops below its predecessor
    struct Block {
        value: f64,
        weight: f64,
        span: usize,
    }
    let mut blocks: Vec<Block> = Vec::with_capacity(pooled.len());
    for &(_, target, weight) in &pooled {
        blocks.push(Block {
            value: target,
            weight,
            span: 1,
        });
        while blocks.len() > 1 && blocks[blocks.len() - 2].value > blocks[blocks.len() - 1].value {
            let top = blocks.pop().unwrap();
            let prev = blocks.last_mut().unwrap();
            prev.value = (prev.value * prev.weight + top.value * top.weight)
                / (prev.weight + top.weight);
            prev.weight += top.weight;
            prev.span += top.span;
        }
    }

    let breakpoints: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    let mut values = Vec::with_capacity(pooled.len());
    for block in &blocks {
        values.extend(std::iter::repeat(block.value).take(block.span));
    }
    Ok(IsotonicModel {
        breakpoints,
        values,
    })
}

/// Isotonic fit of a calibration set.
pub fn pava_fit(cal: &CalibrationSet) -> Result<IsotonicModel> {
    isotonic_regression(&cal.points())
}

/// Venn-Abers predictor: keeps the calibration set and refits per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VennAbersModel {
    pub cal: CalibrationSet,
}

impl VennAbersModel {
    pub fn new(cal: CalibrationSet) -> Self {
        VennAbersModel { cal }
    }

    /// Fits two isotonic calibrators, one with the query labelled 0 and
    /// one labelled 1, and returns (p0, p1, calibrated probability) with
    /// the calibrated value p1 / (1 - p0 + p1).
    pub fn predict(&self, score: f64) -> Result<(f64, f64, f64)> {
        let p0 = pava_fit(&self.cal.augmented(score, 0))?.predict(score);
        let p1 = pava_fit(&self.cal.augmented(score, 1))?.predict(score);
        Ok((p0, p1, p1 / (1.0 - p0 + p1)))
    }
}

/// Calibrator kind selector used by configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibratorKind {
    None,
    Isotonic,
    VennAbers,
}

impl CalibratorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CalibratorKind::None => "none",
            CalibratorKind::Isotonic => "isotonic",
            CalibratorKind::VennAbers => "venn_abers",
        }
    }
}

/// A fitted calibrator, applied per window at inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Calibrator {
    None,
    Isotonic(IsotonicModel),
    VennAbers(VennAbersModel),
}

impl Calibrator {
    pub fn kind(&self) -> CalibratorKind {
        match self {
            Calibrator::None => CalibratorKind::None,
            Calibrator::Isotonic(_) => CalibratorKind::Isotonic,
            Calibrator::VennAbers(_) => CalibratorKind::VennAbers,
        }
    }

    /// Calibrated positive-class probability.
    pub fn calibrate_score(&self, score: f64) -> Result<f64> {
        match self {
            Calibrator::None => Ok(score),
            Calibrator::Isotonic(model) => Ok(model.predict(score)),
            Calibrator::VennAbers(model) => Ok(model.predict(score)?.2),
        }
    }

    /// Maps a window's probability vector through the calibrator. The
    /// identity calibrator accepts any K; the others are binary-only.
    pub fn calibrate(&self, probs: &ProbVector) -> Result<ProbVector> {
        if matches!(self, Calibrator::None) {
            return Ok(probs.clone());
        }
        if probs.num_classes() != 2 {
            return Err(Error::CalibratorNeedsBinary(self.kind().as_str().into()));
        }
        let calibrated = self.calibrate_score(probs.probs()[1])?;
        ProbVector::new(vec![1.0 - calibrated, calibrated])
    }
}

/// Scores every validation window with the model, inherits each window's
/// label from its series, and fits the requested calibrator.
pub fn fit_calibrator<M: LocalModel>(
    kind: CalibratorKind,
    model: &M,
    val_records: &[SeriesRecord],
    spec: WindowSpec,
) -> Result<Calibrator> {
    if kind == CalibratorKind::None {
        return Ok(Calibrator::None);
    }
    if model.num_classes() != 2 {
        return Err(Error::CalibratorNeedsBinary(kind.as_str().into()));
    }
    if val_records.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for record in val_records {
        for w in 0..spec.count_for(record.len()) {
            let window_ref = WindowRef {
                series_id: record.id.clone(),
                offset: w * spec.stride,
            };
            let window = materialize_from(&window_ref, record, spec.window_len)?;
            let (probs, _) = model.forward(&window)?;
            scores.push(probs.probs()[1]);
            labels.push(record.label as u8);
        }
    }
    let cal = CalibrationSet::new(scores, labels)?;
    Ok(match kind {
        CalibratorKind::None => unreachable!(),
        CalibratorKind::Isotonic => Calibrator::Isotonic(pava_fit(&cal)?),
        CalibratorKind::VennAbers => Calibrator::VennAbers(VennAbersModel::new(cal)),
    })
}

/// Expected calibration error over equal-width bins: the bin-weighted
/// mean absolute gap between mean score and empirical positive rate.
pub fn expected_calibration_error(scores: &[f64], labels: &[u8], bins: usize) -> Result<f64> {
    if bins < 1 {
        return Err(Error::InvalidConfig("ECE needs at least one bin".into()));
    }
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::UndefinedMetric(format!(
            "ECE over {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut sum_scores = vec![0.0; bins];
    let mut sum_pos = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for (&s, &l) in scores.iter().zip(labels) {
        let bin = ((s * bins as f64) as usize).min(bins - 1);
        sum_scores[bin] += s;
        sum_pos[bin] += l as f64;
        counts[bin] += 1;
    }
    let n = scores.len() as f64;
    let mut ece = 0.0;
    for b in 0..bins {
        if counts[b] == 0 {
            continue;
        }
        let confidence = sum_scores[b] / counts[b] as f64;
        let accuracy = sum_pos[b] / counts[b] as f64;
        ece += counts[b] as f64 / n * (confidence - accuracy).abs();
    }
    Ok(ece)
}
