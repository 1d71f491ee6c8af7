//! Stochastic sparse sampling for variable-length time series classification.
//!
//! The pipeline: slice every series into fixed-size windows, sample windows
//! across the corpus in proportion to series length, score each window with a
//! small local model, calibrate the window scores, and average them back into
//! one probability vector per series. Temporal averaging of the same window
//! scores yields a per-series probability heatmap.

pub mod backbone;
pub mod calibrate;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod prob;
pub mod sampling;
pub mod seed;
pub mod series;

pub use error::{Error, Result};
pub use prob::{aggregate, mean_weights, AggregationWeights, ProbVector};
pub use series::{num_classes, SeriesRecord, Split};
