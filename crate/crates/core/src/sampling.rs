//! Window pool and length-proportional epoch sampling.
//!
//! All training series are sliced into fixed-size windows and pooled.
//! Sampling batches uniformly from the pool makes the chance of drawing a
//! window from series i proportional to its window count A_i, i.e. roughly
//! its length; the number of series-i windows in a fresh batch of size B
//! is Binomial(B, A_i / sum A_j). Within an epoch, draws are without
//! replacement so every window is visited exactly once.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::SeriesRecord;

/// Window geometry: length and stride in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_len: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(window_len: usize, stride: usize) -> Result<Self> {
        if window_len < 1 || stride < 1 || stride > window_len {
            return Err(Error::InvalidConfig(format!(
                "window spec needs 1 <= stride <= window_len, got L={window_len} S={stride}"
            )));
        }
        Ok(WindowSpec { window_len, stride })
    }

    /// Windows a series of length `t` contributes: floor((T-L)/S) + 1,
    /// or a single padded window when the series is shorter than L.
    pub fn count_for(&self, t: usize) -> usize {
        if t < self.window_len {
            1
        } else {
            (t - self.window_len) / self.stride + 1
        }
    }
}

/// Points into a series at a window start.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowRef {
    pub series_id: String,
    pub offset: usize,
}

/// Every window across a record collection, plus per-series counts.
#[derive(Debug, Clone)]
pub struct WindowPool {
    pub spec: WindowSpec,
    pub refs: Vec<WindowRef>,
    pub per_series_counts: BTreeMap<String, usize>,
}

impl WindowPool {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// Marginal probability that a uniformly drawn window belongs to the
    /// given series.
    pub fn series_probability(&self, series_id: &str) -> Option<f64> {
        self.per_series_counts
            .get(series_id)
            .map(|&count| count as f64 / self.refs.len() as f64)
    }
}

/// Enumerates window offsets {0, S, 2S, ...} for every series. Series
/// shorter than one window contribute a single zero-padded window at
/// offset 0 so that every series is represented.
pub fn build_pool(records: &[SeriesRecord], spec: WindowSpec) -> Result<WindowPool> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut refs = Vec::new();
    let mut per_series_counts = BTreeMap::new();
    for record in records {
        let count = spec.count_for(record.len());
        for w in 0..count {
            refs.push(WindowRef {
                series_id: record.id.clone(),
                offset: w * spec.stride,
            });
        }
        if per_series_counts.insert(record.id.clone(), count).is_some() {
            return Err(Error::DuplicateId(record.id.clone()));
        }
    }
    Ok(WindowPool {
        spec,
        refs,
        per_series_counts,
    })
}

/// Copies out the window slice, zero-padding the tail when the series is
/// shorter than the window.
pub fn materialize(
    window: &WindowRef,
    records: &[SeriesRecord],
    window_len: usize,
) -> Result<Array2<f64>> {
    let record = records
        .iter()
        .find(|r| r.id == window.series_id)
        .ok_or_else(|| Error::DanglingRef {
            id: window.series_id.clone(),
            offset: window.offset,
        })?;
    materialize_from(window, record, window_len)
}

/// [`materialize`] against an already-resolved record, for callers that
/// keep their own id index.
pub fn materialize_from(
    window: &WindowRef,
    record: &SeriesRecord,
    window_len: usize,
) -> Result<Array2<f64>> {
    let t = record.len();
    let dangling = || Error::DanglingRef {
        id: window.series_id.clone(),
        offset: window.offset,
    };
    if t < window_len {
        // short series carry exactly one padded window, at offset 0
        if window.offset != 0 {
            return Err(dangling());
        }
        let mut out = Array2::zeros((window_len, record.channels()));
        out.slice_mut(ndarray::s![..t, ..]).assign(&record.values);
        return Ok(out);
    }
    if window.offset + window_len > t {
        return Err(dangling());
    }
    Ok(record
        .values
        .slice(ndarray::s![window.offset..window.offset + window_len, ..])
        .to_owned())
}

/// Emits the pool as shuffled batches, each window exactly once per epoch.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl EpochSampler {
    /// Shuffles the pool under the given seed. Reseeding per epoch is the
    /// caller's job (derive a child seed from the epoch number).
    pub fn new(pool: &WindowPool, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if pool.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        Ok(EpochSampler {
            order,
            cursor: 0,
            batch_size,
        })
    }

    /// Next batch of pool indices, `None` once the epoch is exhausted.
    /// The final batch may be smaller than `batch_size`.
    pub fn next_batch<'p>(&mut self, pool: &'p WindowPool) -> Option<Vec<&'p WindowRef>> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end]
            .iter()
            .map(|&i| &pool.refs[i])
            .collect();
        self.cursor = end;
        Some(batch)
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }
}
