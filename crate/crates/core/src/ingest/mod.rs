//! Dataset loading and preprocessing.
//!
//! A dataset is a directory with a `manifest.csv` (header `path,id,label`
//! plus an optional `split` column) pointing at per-series CSV files, one
//! row per time step, one column per channel. Channel counts may differ
//! across series; lengths almost always do.

pub mod synth;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::series::{num_classes, SeriesRecord, Split};

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub id: String,
    pub label: usize,
    pub split: Option<Split>,
}

/// Index of a dataset on disk: the manifest rows plus the directory they
/// are relative to.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Validates id uniqueness and label contiguity up front so later
    /// stages can assume both.
    pub fn new(root: PathBuf, entries: Vec<ManifestEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidManifest("manifest has no entries".into()));
        }
        let mut seen = HashSet::new();
        for entry in &entries {
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::DuplicateId(entry.id.clone()));
            }
        }
        let max_label = entries.iter().map(|e| e.label).max().unwrap();
        let present: HashSet<usize> = entries.iter().map(|e| e.label).collect();
        for class in 0..=max_label {
            if !present.contains(&class) {
                return Err(Error::InvalidManifest(format!(
                    "labels must form a contiguous set starting at 0; class {class} is absent"
                )));
            }
        }
        Ok(DatasetManifest { root, entries })
    }

    /// Reads `manifest.csv`; the dataset root is the manifest's directory.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let io_err = |source| Error::Io {
            path: display.clone(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(source) => io_err(source),
                other => Error::InvalidManifest(format!("{other:?}")),
            })?;

        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| Error::InvalidManifest(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let expected_base = ["path", "id", "label"];
        let ok = (headers.len() == 3 && headers == expected_base)
            || (headers.len() == 4 && headers[..3] == expected_base && headers[3] == "split");
        if !ok {
            return Err(Error::InvalidManifest(format!(
                "expected header path,id,label[,split], found {}",
                headers.join(",")
            )));
        }

        let mut entries = Vec::new();
        for (row_idx, record) in reader.records().enumerate() {
            let row = row_idx + 2; // 1-based, after the header
            let record = record.map_err(|e| Error::Parse {
                path: display.clone(),
                row,
                column: 0,
                reason: e.to_string(),
            })?;
            let field = |col: usize| record.get(col).unwrap_or("");
            let label = field(2).parse::<usize>().map_err(|e| Error::Parse {
                path: display.clone(),
                row,
                column: 3,
                reason: format!("label: {e}"),
            })?;
            let split = match field(3) {
                "" => None,
                text => Some(Split::parse(text).map_err(|_| Error::Parse {
                    path: display.clone(),
                    row,
                    column: 4,
                    reason: format!("split must be train, val, or test, found {text:?}"),
                })?),
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(field(0)),
                id: field(1).to_string(),
                label,
                split,
            });
        }
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        DatasetManifest::new(root, entries)
    }

    /// Writes `manifest.csv` next to the series files.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: display.clone(),
                source,
            },
            other => Error::InvalidManifest(format!("{other:?}")),
        })?;
        let has_splits = self.entries.iter().any(|e| e.split.is_some());
        let mut header = vec!["path", "id", "label"];
        if has_splits {
            header.push("split");
        }
        writer
            .write_record(&header)
            .and_then(|_| {
                for entry in &self.entries {
                    let mut row = vec![
                        entry.path.display().to_string(),
                        entry.id.clone(),
                        entry.label.to_string(),
                    ];
                    if has_splits {
                        row.push(entry.split.map(|s| s.as_str()).unwrap_or("").to_string());
                    }
                    writer.write_record(&row)?;
                }
                writer.flush()?;
                Ok(())
            })
            .map_err(|e| Error::Io {
                path: display,
                source: std::io::Error::other(e),
            })
    }
}

/// Reads one series file: numeric CSV, no header, rows are time steps.
pub fn read_series_csv(path: &Path) -> Result<Array2<f64>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: display.clone(),
                source,
            },
            other => Error::Parse {
                path: display.clone(),
                row: 0,
                column: 0,
                reason: format!("{other:?}"),
            },
        })?;

    let mut values: Vec<f64> = Vec::new();
    let mut channels = 0usize;
    let mut rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            row,
            column: 0,
            reason: e.to_string(),
        })?;
        if rows == 0 {
            channels = record.len();
        } else if record.len() != channels {
            return Err(Error::Parse {
                path: display.clone(),
                row,
                column: record.len(),
                reason: format!("expected {channels} columns, found {}", record.len()),
            });
        }
        for (col_idx, field) in record.iter().enumerate() {
            let value = field.parse::<f64>().map_err(|e| Error::Parse {
                path: display.clone(),
                row,
                column: col_idx + 1,
                reason: e.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: display.clone(),
                    row,
                    column: col_idx + 1,
                    reason: format!("non-finite value {field}"),
                });
            }
            values.push(value);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptySeries { path: display });
    }
    Array2::from_shape_vec((rows, channels), values)
        .map_err(|e| Error::InvalidSeries {
            id: display,
            reason: e.to_string(),
        })
}

/// Writes one series as numeric CSV, one row per time step.
pub fn write_series_csv(path: &Path, values: &Array2<f64>) -> Result<()> {
    let display = path.display().to_string();
    let io_err = |source| Error::Io {
        path: display.clone(),
        source,
    };
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => io_err(source),
            other => Error::InvalidSeries {
                id: display.clone(),
                reason: format!("{other:?}"),
            },
        })?;
    for row in values.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writer
            .write_record(&cells)
            .map_err(|e| io_err(std::io::Error::other(e)))?;
    }
    writer.flush().map_err(io_err)
}

/// Loads every series referenced by the manifest.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<SeriesRecord>> {
    let mut records = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let values = read_series_csv(&manifest.root.join(&entry.path))?;
        let mut record = SeriesRecord::new(entry.id.clone(), values, entry.label)?;
        record.split = entry.split;
        records.push(record);
    }
    Ok(records)
}

/// Per-series preprocessing knobs plus the split fractions used downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub zscore: bool,
    pub downsample_kernel: usize,
    pub downsample_stride: usize,
    pub balance_classes: bool,
    pub split_fractions: (f64, f64, f64),
    /// The source material is silent on whether normalization happens
    /// before or after pooling; default is downsample then z-score.
    pub zscore_first: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            zscore: true,
            downsample_kernel: 24,
            downsample_stride: 12,
            balance_classes: true,
            split_fractions: (0.7, 0.1, 0.2),
            zscore_first: false,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.downsample_stride < 1 || self.downsample_kernel < self.downsample_stride {
            return Err(Error::InvalidConfig(format!(
                "need downsample_kernel >= downsample_stride >= 1, got kernel {} stride {}",
                self.downsample_kernel, self.downsample_stride
            )));
        }
        let (a, b, c) = self.split_fractions;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "split fractions must be positive, got ({a}, {b}, {c})"
            )));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must sum to 1, got {}",
                a + b + c
            )));
        }
        Ok(())
    }
}

/// Applies the per-series stages of `config` (downsampling and z-scoring,
/// in the configured order). Balancing and splitting need a seed and are
/// separate calls.
pub fn preprocess(records: Vec<SeriesRecord>, config: &PreprocessConfig) -> Result<Vec<SeriesRecord>> {
    config.validate()?;
    let pool = |r: SeriesRecord| -> Result<SeriesRecord> {
        if config.downsample_kernel == 1 && config.downsample_stride == 1 {
            Ok(r)
        } else {
            downsample_avgpool(&r, config.downsample_kernel, config.downsample_stride)
        }
    };
    records
        .into_iter()
        .map(|r| {
            if config.zscore {
                if config.zscore_first {
                    pool(zscore_normalize(&r))
                } else {
                    Ok(zscore_normalize(&pool(r)?))
                }
            } else {
                pool(r)
            }
        })
        .collect()
}

/// Centers and scales each channel to zero mean and unit standard
/// deviation (population std, with an epsilon guard so constant channels
/// come out all-zero instead of dividing by zero).
pub fn zscore_normalize(series: &SeriesRecord) -> SeriesRecord {
    const EPS: f64 = 1e-8;
    let t = series.len() as f64;
    let mut values = series.values.clone();
    for mut channel in values.columns_mut() {
        let mean = channel.sum() / t;
        let var = channel.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t;
        let denom = var.sqrt().max(EPS);
        channel.mapv_inplace(|x| (x - mean) / denom);
    }
    SeriesRecord {
        values,
        ..series.clone()
    }
}

/// 1D average pooling along time, all channels at once. Output length is
/// floor((T - kernel)/stride) + 1.
pub fn downsample_avgpool(series: &SeriesRecord, kernel: usize, stride: usize) -> Result<SeriesRecord> {
    if kernel < 1 || stride < 1 {
        return Err(Error::InvalidConfig(format!(
            "downsample kernel and stride must be >= 1, got {kernel} and {stride}"
        )));
    }
    let t = series.len();
    if t < kernel {
        return Err(Error::SeriesTooShort {
            id: series.id.clone(),
            len: t,
            kernel,
        });
    }
    let out_len = (t - kernel) / stride + 1;
    let m = series.channels();
    let mut values = Array2::zeros((out_len, m));
    for j in 0..out_len {
        let window = series.values.slice(ndarray::s![j * stride..j * stride + kernel, ..]);
        for c in 0..m {
            values[[j, c]] = window.column(c).sum() / kernel as f64;
        }
    }
    Ok(SeriesRecord {
        values,
        ..series.clone()
    })
}

/// Keeps the first `length` samples, zero-padding at the end if the series
/// is shorter.
pub fn pad_or_truncate(series: &SeriesRecord, length: usize) -> SeriesRecord {
    assert!(length >= 1, "target length must be >= 1");
    let t = series.len();
    let m = series.channels();
    let mut values = Array2::zeros((length, m));
    let keep = t.min(length);
    values
        .slice_mut(ndarray::s![..keep, ..])
        .assign(&series.values.slice(ndarray::s![..keep, ..]));
    SeriesRecord {
        values,
        ..series.clone()
    }
}

/// Caps every class at the minority-class count, sampling the survivors
/// uniformly without replacement. Output preserves input order.
pub fn balance_classes(records: Vec<SeriesRecord>, seed: u64) -> Result<Vec<SeriesRecord>> {
    let k = num_classes(&records)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (idx, record) in records.iter().enumerate() {
        by_class[record.label].push(idx);
    }
    let min_count = by_class.iter().map(Vec::len).min().unwrap();

    let mut keep = vec![false; records.len()];
    for (class, indices) in by_class.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "balance", class as u64));
        indices.shuffle(&mut rng);
        for &idx in indices.iter().take(min_count) {
            keep[idx] = true;
        }
    }
    Ok(records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect())
}

/// Assigns train/val/test splits, stratified by class. Records that
/// already carry a split (a manifest override) keep it; only unassigned
/// records are distributed. Per class, counts follow the fractions by
/// largest-remainder rounding, and every split with a positive fraction
/// receives at least one record.
pub fn split_dataset(
    mut records: Vec<SeriesRecord>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<SeriesRecord>> {
    let fracs = [fractions.0, fractions.1, fractions.2];
    if fracs.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be nonnegative, got {fracs:?}"
        )));
    }
    if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions must sum to 1, got {}",
            fracs.iter().sum::<f64>()
        )));
    }
    let k = num_classes(&records)?;
    let splits = [Split::Train, Split::Val, Split::Test];
    let required = fracs.iter().filter(|f| **f > 0.0).count();

    for class in 0..k {
        let mut unassigned: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == class && r.split.is_none())
            .map(|(i, _)| i)
            .collect();
        if unassigned.is_empty() {
            continue; // fully pre-assigned by the manifest
        }
        let n = unassigned.len();
        if n < required {
            return Err(Error::Stratification {
                class,
                count: n,
                required,
            });
        }

        // largest-remainder apportionment of n records over the fractions
        let targets: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
        let mut counts: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
        let mut leftover = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let ra = targets[a] - targets[a].floor();
            let rb = targets[b] - targets[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &s in order.iter().cycle() {
            if leftover == 0 {
                break;
            }
            counts[s] += 1;
            leftover -= 1;
        }
        // guarantee one record per in-use split, pulling from the largest
        for s in 0..3 {
            while fracs[s] > 0.0 && counts[s] == 0 {
                let donor = (0..3).max_by_key(|&d| counts[d]).unwrap();
                counts[donor] -= 1;
                counts[s] += 1;
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "split", class as u64));
        unassigned.shuffle(&mut rng);
        let mut cursor = 0;
        for (s, &count) in counts.iter().enumerate() {
            for &idx in &unassigned[cursor..cursor + count] {
                records[idx].split = Some(splits[s]);
            }
            cursor += count;
        }
    }
    Ok(records)
}
