//! One-step-ahead forecasters and their training loop.
//!
//! Two kinds are supported: an LSTM (one recurrent layer, dense head) trained
//! with momentum SGD on MAE through full-window BPTT, and a seasonal-naive
//! rule that repeats the value one season before the target.

pub mod lstm;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{featurize, FeatureConfig, TimeSeries};

pub use lstm::LstmShape;
pub use train::{
    analytic_gradient, finite_difference_gradient, gradient_check, gradient_check_with,
    init_parameters, split_windows, train, train_per_cluster, ClusterTraining, EpochRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Lstm,
    SeasonalNaive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    /// Input window length (the seasonal period n).
    pub window: usize,
    /// Steps ahead (m).
    pub horizon: usize,
    pub hidden_size: usize,
    pub feature_config: FeatureConfig,
    pub seed: u64,
}

impl PredictorSpec {
    pub fn lstm(feature_config: FeatureConfig, hidden_size: usize, seed: u64) -> Self {
        Self {
            kind: PredictorKind::Lstm,
            window: 24,
            horizon: 1,
            hidden_size,
            feature_config,
            seed,
        }
    }

    pub fn seasonal_naive(feature_config: FeatureConfig) -> Self {
        Self {
            kind: PredictorKind::SeasonalNaive,
            window: 24,
            horizon: 1,
            hidden_size: 1,
            feature_config,
            seed: 0,
        }
    }

    pub fn features(&self) -> usize {
        self.feature_config.feature_count()
    }

    pub fn shape(&self) -> LstmShape {
        LstmShape::new(self.features(), self.hidden_size)
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            PredictorKind::Lstm => self.shape().param_count(),
            PredictorKind::SeasonalNaive => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.horizon == 0 || self.hidden_size == 0 {
            return Err(Error::InvalidParameter(format!(
                "predictor needs window, horizon and hidden size >= 1 (got {}, {}, {})",
                self.window, self.horizon, self.hidden_size
            )));
        }
        if self.kind == PredictorKind::SeasonalNaive && self.horizon > self.window {
            return Err(Error::InvalidParameter(
                "seasonal-naive needs horizon <= window".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingProtocol {
    pub epochs: usize,
    pub loss: Loss,
    pub lr0: f64,
    pub momentum: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    pub min_lr: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
}

impl Default for TrainingProtocol {
    fn default() -> Self {
        Self {
            epochs: 90,
            loss: Loss::Mae,
            lr0: 0.1,
            momentum: 0.9,
            plateau_patience: 10,
            plateau_factor: 0.1,
            early_stop_patience: 40,
            min_lr: 1e-5,
            batch_size: 32,
            validation_fraction: 0.15,
        }
    }
}

impl TrainingProtocol {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.epochs == 0 || self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("epochs and patience values must be >= 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.lr0 > 0.0) || !(self.min_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }
}

/// A trained forecaster. `cluster_id` is `None` for a model trained on all
/// clusters' data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub spec: PredictorSpec,
    pub protocol: TrainingProtocol,
    pub parameters: Vec<f64>,
    pub train_history: Vec<EpochRecord>,
    pub cluster_id: Option<usize>,
}

impl PredictorModel {
    /// The seasonal-naive rule needs no training.
    pub fn seasonal_naive(spec: PredictorSpec, cluster_id: Option<usize>) -> Self {
        Self {
            spec: PredictorSpec {
                kind: PredictorKind::SeasonalNaive,
                ..spec
            },
            protocol: TrainingProtocol::default(),
            parameters: Vec::new(),
            train_history: Vec::new(),
            cluster_id,
        }
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.train_history
            .iter()
            .map(|r| r.val_loss)
            .min_by(f64::total_cmp)
    }

    /// One-step forecast from a `window x features` time-major input.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        let expected = self.spec.window * self.spec.features();
        if input.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: input.len(),
            });
        }
        match self.spec.kind {
            PredictorKind::Lstm => {
                if self.parameters.len() != self.spec.param_count() {
                    return Err(Error::LengthMismatch {
                        expected: self.spec.param_count(),
                        actual: self.parameters.len(),
                    });
                }
                let mut ws = lstm::Workspace::default();
                Ok(lstm::forward(self.spec.shape(), &self.parameters, input, &mut ws))
            }
            PredictorKind::SeasonalNaive => {
                // Target sits at window start + n + m - 1; one season earlier is row m - 1.
                let row = self.spec.horizon - 1;
                Ok(input[row * self.spec.features()])
            }
        }
    }
}

/// Free-function form of [`PredictorModel::forward`].
pub fn forward(model: &PredictorModel, input: &[f64]) -> Result<f64> {
    model.forward(input)
}

/// One supervised example: `n x f` input rows (time-major) and the output
/// channel `m` steps after the window.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub input: Vec<f64>,
    pub target: f64,
    /// Absolute hour of the target.
    pub target_time: i64,
    pub source_cell: String,
}

/// Stride-1 windows over an already featurized series (output channel first).
pub fn windows_from_features(series: &TimeSeries, n: usize, m: usize) -> Vec<Window> {
    let len = series.len();
    if n == 0 || m == 0 || len < n + m {
        return Vec::new();
    }
    let chans = series.channels();
    let f = chans.len();
    let out = series.output();
    (0..=len - n - m)
        .map(|start| {
            let mut input = Vec::with_capacity(n * f);
            for t in start..start + n {
                input.extend(chans.iter().map(|c| c.values[t]));
            }
            let target_idx = start + n + m - 1;
            Window {
                input,
                target: out[target_idx],
                target_time: series.time_at(target_idx),
                source_cell: series.cell_id().to_string(),
            }
        })
        .collect()
}

/// Featurizes a normalized series for `config` and slices it into windows.
/// Produces `len - n - m + 1` windows, none when the series is too short.
pub fn make_windows(
    series: &TimeSeries,
    config: &FeatureConfig,
    n: usize,
    m: usize,
) -> Result<Vec<Window>> {
    let features = featurize(series, config)?;
    Ok(windows_from_features(&features, n, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(len: usize) -> TimeSeries {
        TimeSeries::univariate("c", 100, "y", (0..len).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn window_counts_and_targets() {
        let cfg = FeatureConfig::uni("y");
        assert_eq!(make_windows(&ramp(25), &cfg, 24, 1).unwrap().len(), 1);
        let w = make_windows(&ramp(48), &cfg, 24, 1).unwrap();
        assert_eq!(w.len(), 24);
        assert_eq!(w[0].target, 24.0);
        assert_eq!(w[0].target_time, 124);
        assert_eq!(w[0].input.len(), 24);
        assert!(make_windows(&ramp(24), &cfg, 24, 1).unwrap().is_empty());
        let w = make_windows(&ramp(30), &cfg, 24, 3).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[0].target, 26.0);
    }

    #[test]
    fn seasonal_naive_repeats_one_season_back() {
        let spec = PredictorSpec::seasonal_naive(FeatureConfig::uni("y"));
        let model = PredictorModel::seasonal_naive(spec, None);
        let mut input = vec![0.0; 24];
        input[0] = 0.37;
        assert_eq!(model.forward(&input).unwrap(), 0.37);
        assert!(model.forward(&input[..23]).is_err());
    }

    #[test]
    fn zero_lstm_outputs_its_dense_bias() {
        let spec = PredictorSpec::lstm(FeatureConfig::uni("y"), 4, 0);
        let mut model = PredictorModel::seasonal_naive(spec.clone(), None);
        model.spec = spec;
        model.parameters = vec![0.0; model.spec.param_count()];
        assert_eq!(model.forward(&[0.5; 24]).unwrap(), 0.0);
        let last = model.parameters.len() - 1;
        model.parameters[last] = 0.25;
        assert_eq!(model.forward(&[0.9; 24]).unwrap(), 0.25);
        assert_eq!(forward(&model, &[0.9; 24]).unwrap(), 0.25);
    }

    #[test]
    fn protocol_defaults_and_validation() {
        let p = TrainingProtocol::default();
        assert_eq!(p.epochs, 90);
        assert_eq!(p.momentum, 0.9);
        assert_eq!(p.lr0, 0.1);
        assert_eq!(p.plateau_patience, 10);
        assert_eq!(p.plateau_factor, 0.1);
        assert_eq!(p.early_stop_patience, 40);
        p.validate().unwrap();
        assert!(TrainingProtocol { plateau_factor: 1.0, ..p.clone() }.validate().is_err());
        assert!(TrainingProtocol { epochs: 0, ..p }.validate().is_err());
    }
}
