//! Cluster-train-adapt forecasting for seasonal cell traffic.
//!
//! Training cells are cut into daily segments and clustered with DTW k-means
//! (DBA centroids); one LSTM is trained per cluster. At inference time each
//! unseen stream is matched step by step to its DTW-nearest centroid and
//! served by that cluster's model, with an out-of-distribution loop that can
//! grow the cluster set.

pub mod adaptive;
pub mod dba;
pub mod dtw;
pub mod error;
pub mod evaluation;
pub mod kmeans;
pub mod metrics;
pub mod predictor;
pub mod series;
pub mod synth;

pub use error::{Error, Result};
