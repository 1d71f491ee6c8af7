//! The variable-length series record shared by every stage.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset partition a series belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidManifest(format!("unknown split {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One time series: `values` has shape `T x M` (time steps by channels),
/// where both T and M may differ across records in a collection.
#[derive(Debug, Clone)]
pub struct SeriesRecord {
    pub id: String,
    pub values: Array2<f64>,
    pub label: usize,
    pub split: Option<Split>,
}

impl SeriesRecord {
    pub fn new(id: impl Into<String>, values: Array2<f64>, label: usize) -> Result<Self> {
        let id = id.into();
        let (t, m) = values.dim();
        if t == 0 || m == 0 {
            return Err(Error::InvalidSeries {
                id,
                reason: format!("shape {t}x{m} must be at least 1x1"),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries {
                id,
                reason: format!("non-finite value {bad}"),
            });
        }
        Ok(Self {
            id,
            values,
            label,
            split: None,
        })
    }

    /// Sequence length in samples.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Channel count.
    pub fn channels(&self) -> usize {
        self.values.ncols()
    }
}

/// Number of classes implied by a record collection, validating that
/// labels form the contiguous set `{0..K-1}` with every class present.
pub fn num_classes(records: &[SeriesRecord]) -> Result<usize> {
    let max = records
        .iter()
        .map(|r| r.label)
        .max()
        .ok_or(Error::EmptyDataset)?;
    let k = max + 1;
    for class in 0..k {
        if !records.iter().any(|r| r.label == class) {
            return Err(Error::MissingClass(class));
        }
    }
    Ok(k)
}
