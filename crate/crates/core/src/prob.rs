//! Class-probability vectors and their convex aggregation.
//!
//! Window scorers, calibrators, and series-level predictions all speak
//! [`ProbVector`]: a length-K simplex vector. [`aggregate`] combines a
//! collection of them with [`AggregationWeights`] into a single vector,
//! and the result is again a valid distribution for any simplex weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the simplex constraint after floating-point arithmetic.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Neumaier-compensated sum. Exact enough that `count` copies of
/// `1/count` sum to `1.0` bit-for-bit.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A probability distribution over `K >= 2` classes.
///
/// Entries are nonnegative and sum to 1. Construction renormalizes
/// deviations below [`SIMPLEX_TOL`] and rejects anything larger, so a
/// grossly broken vector fails loudly instead of being papered over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidProbability(format!(
                "need K >= 2 classes, got {}",
                probs.len()
            )));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidProbability(format!(
                    "entry {i} is not finite"
                )));
            }
            if !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&p) {
                return Err(Error::InvalidProbability(format!(
                    "entry {i} = {p} outside [0, 1]"
                )));
            }
        }
        let sum = compensated_sum(probs.iter().copied());
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidProbability(format!(
                "entries sum to {sum}, not 1"
            )));
        }
        let mut probs = probs;
        for p in &mut probs {
            *p = p.clamp(0.0, 1.0) / sum;
        }
        Ok(Self(probs))
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    /// Binary distribution from the positive-class probability.
    pub fn binary(positive: f64) -> Result<Self> {
        Self::new(vec![1.0 - positive, positive])
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Index of the most probable class (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(v: ProbVector) -> Self {
        v.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

/// Convex-combination weights: one nonnegative entry per contributing
/// window, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights(Vec<f64>);

impl AggregationWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyAggregation);
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < -SIMPLEX_TOL {
                return Err(Error::InvalidWeights(format!("weight {i} = {w}")));
            }
        }
        let sum = compensated_sum(weights.iter().copied());
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        let mut weights = weights;
        for w in &mut weights {
            *w = w.max(0.0) / sum;
        }
        Ok(Self(weights))
    }

    /// `count` equal weights of `1/count` (mean aggregation).
    pub fn uniform(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::EmptyAggregation);
        }
        Ok(Self(vec![1.0 / count as f64; count]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }
}

/// Convex combination of probability vectors: `sum_j alpha_j * y_j`.
///
/// The output is itself a valid distribution whenever the inputs are,
/// for any simplex weights and any K.
pub fn aggregate(preds: &[ProbVector], weights: &AggregationWeights) -> Result<ProbVector> {
    if preds.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    if weights.len() != preds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions but {} weights",
            preds.len(),
            weights.len()
        )));
    }
    let k = preds[0].num_classes();
    for (i, p) in preds.iter().enumerate() {
        if p.num_classes() != k {
            return Err(Error::DimensionMismatch(format!(
                "prediction {i} has K = {}, expected {k}",
                p.num_classes()
            )));
        }
    }
    let out: Vec<f64> = (0..k)
        .map(|j| {
            compensated_sum(
                preds
                    .iter()
                    .zip(weights.weights())
                    .map(|(p, &w)| w * p.probs()[j]),
            )
        })
        .collect();
    ProbVector::new(out)
}

/// Mean aggregation over `count` predictions.
pub fn mean_weights(count: usize) -> Result<AggregationWeights> {
    AggregationWeights::uniform(count)
}
