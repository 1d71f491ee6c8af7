//! Evaluation metrics: F1, ROC AUC, accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary confusion counts at a fixed decision threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(predictions: &[usize], labels: &[usize]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictions vs {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut c = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p == 1, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Harmonic mean of precision and recall.
///
/// Returns 0 when TP = 0 but positives were predicted or present; errors
/// only when no positive appears on either side.
pub fn f1_score(counts: &ConfusionCounts) -> Result<f64> {
    if counts.tp + counts.fp == 0 && counts.tp + counts.fn_ == 0 {
        return Err(Error::UndefinedMetric(
            "F1 needs a predicted or actual positive".into(),
        ));
    }
    if counts.tp == 0 {
        return Ok(0.0);
    }
    let precision = counts.tp as f64 / (counts.tp + counts.fp) as f64;
    let recall = counts.tp as f64 / (counts.tp + counts.fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// ROC AUC as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counted half.
///
/// Computed via midranks in O(n log n); identical to the pairwise
/// definition and to the trapezoidal ROC integral.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both a positive and a negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // midrank sum over positives, ties share the average rank
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0; // average of ranks i+1..=j
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Percentage of exact class matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::UndefinedMetric(format!(
            "accuracy over {} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(100.0 * correct as f64 / predictions.len() as f64)
}

/// Macro-averaged F1 over classes (one-vs-rest); equals plain binary F1
/// of class 1 only when K = 2 is treated positive-vs-rest, so binary
/// reporting uses [`f1_score`] directly instead.
pub fn macro_f1(predictions: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::UndefinedMetric("macro F1 needs K >= 2".into()));
    }
    let mut sum = 0.0;
    for class in 0..k {
        let preds: Vec<usize> = predictions.iter().map(|&p| (p == class) as usize).collect();
        let labs: Vec<usize> = labels.iter().map(|&y| (y == class) as usize).collect();
        let counts = ConfusionCounts::from_predictions(&preds, &labs)?;
        sum += f1_score(&counts).unwrap_or(0.0);
    }
    Ok(sum / k as f64)
}
