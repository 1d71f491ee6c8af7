//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while loading data, sampling windows,
/// training, calibrating, or computing metrics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("aggregation over an empty collection")]
    EmptyAggregation,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid aggregation weights: {0}")]
    InvalidWeights(String),

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("invalid series {id}: {reason}")]
    InvalidSeries { id: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at row {row}, column {column}: {reason}")]
    Parse {
        path: String,
        row: usize,
        column: usize,
        reason: String,
    },

    #[error("series file {path} is empty")]
    EmptySeries { path: String },

    #[error("duplicate series id {0}")]
    DuplicateId(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("series {id} too short: length {len} < kernel {kernel}")]
    SeriesTooShort { id: String, len: usize, kernel: usize },

    #[error("class {0} has no records")]
    MissingClass(usize),

    #[error("cannot stratify: class {class} has {count} records but {required} splits need at least one each")]
    Stratification {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error("cannot pack {requested} burst samples into a series of length {len}")]
    Packing { requested: usize, len: usize },

    #[error("window pool built from an empty dataset")]
    EmptyDataset,

    #[error("window ref ({id}, {offset}) does not resolve to a series slice")]
    DanglingRef { id: String, offset: usize },

    #[error("non-finite gradient encountered ({context})")]
    NonFiniteGradient { context: String },

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("calibrator kind {0} requires binary labels (K = 2)")]
    CalibratorNeedsBinary(String),

    #[error("heatmap bin width must be at least 1")]
    InvalidBinWidth,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint incompatible with dataset: field {field} (checkpoint {expected}, data {actual})")]
    Incompatible {
        field: String,
        expected: String,
        actual: String,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unknown series id {0}")]
    UnknownSeries(String),
}
