//! Error type shared by every pipeline stage.

use std::path::PathBuf;

/// Errors raised by the forecasting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("band {band} cannot connect sequences of lengths {len_a} and {len_b}")]
    InfeasibleBand {
        band: usize,
        len_a: usize,
        len_b: usize,
    },

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("cell {cell}: {message}")]
    Cadence { cell: String, message: String },

    #[error("{0}")]
    MissingChannel(String),

    #[error("unknown cell `{0}`")]
    UnknownCell(String),

    #[error("k = {k} exceeds the number of segments ({segments})")]
    TooManyClusters { k: usize, segments: usize },

    #[error("training diverged at epoch {epoch} (lr = {lr}): non-finite loss")]
    Diverged { epoch: usize, lr: f64 },

    #[error("no model for cluster {0}")]
    MissingModel(usize),

    #[error("every cluster is degenerate: no cluster has enough windows to train on")]
    AllClustersDegenerate,

    #[error("held-out cell `{0}` appears in training data")]
    HoldoutLeak(String),

    #[error("fixture too close to the MAE kink: |prediction - target| = {residual:e} <= {limit:e}; pick another input or target")]
    NearKink { residual: f64, limit: f64 },

    #[error("out-of-distribution buffer holds {have} segments, {need} required")]
    InsufficientBuffer { have: usize, need: usize },

    #[error("matrix entry ({row}, {col}): {source}")]
    MatrixEntry {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from bad user input or configuration rather
    /// than an internal failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Diverged { .. } | Error::HoldoutLeak(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
