//! Momentum-SGD training on MAE, gradient checking, and per-cluster training.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use super::lstm::{self, LstmShape, Workspace, GATES};
use super::{
    windows_from_features, PredictorKind, PredictorModel, PredictorSpec, TrainingProtocol, Window,
};
use crate::error::{Error, Result};
use crate::kmeans::ClusterModel;
use crate::series::{featurize, SegmentSet, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Uniform weights in `+-1/sqrt(f + h)`, zero biases except the forget gate
/// (1.0), zero dense bias.
pub fn init_parameters(shape: LstmShape, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / ((shape.features + shape.hidden) as f64).sqrt();
    let mut p: Vec<f64> = (0..shape.param_count())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    let h = shape.hidden;
    for g in 0..GATES {
        let fill = if g == 1 { 1.0 } else { 0.0 };
        p[shape.b(g)..shape.b(g) + h].fill(fill);
    }
    p[shape.dense_b()] = 0.0;
    p
}

/// Deterministically shuffles and splits off the validation tail. Both parts
/// are nonempty when at least two windows are given.
pub fn split_windows(windows: Vec<Window>, fraction: f64, seed: u64) -> (Vec<Window>, Vec<Window>) {
    let mut windows = windows;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5911);
    windows.shuffle(&mut rng);
    let len = windows.len();
    if len < 2 {
        return (windows, Vec::new());
    }
    let val = ((len as f64 * fraction).round() as usize).clamp(1, len - 1);
    let val_part = windows.split_off(len - val);
    (windows, val_part)
}

fn mae_over(shape: LstmShape, params: &[f64], windows: &[Window], ws: &mut Workspace) -> f64 {
    windows
        .iter()
        .map(|w| (lstm::forward(shape, params, &w.input, ws) - w.target).abs())
        .sum::<f64>()
        / windows.len() as f64
}

/// Trains an LSTM and returns the parameters with the best validation loss.
pub fn train(
    spec: &PredictorSpec,
    protocol: &TrainingProtocol,
    train_set: &[Window],
    val_set: &[Window],
) -> Result<PredictorModel> {
    spec.validate()?;
    protocol.validate()?;
    if spec.kind == PredictorKind::SeasonalNaive {
        return Ok(PredictorModel::seasonal_naive(spec.clone(), None));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput("training or validation windows"));
    }
    let shape = spec.shape();
    let expected = spec.window * shape.features;
    if let Some(bad) = train_set.iter().chain(val_set).find(|w| w.input.len() != expected) {
        return Err(Error::LengthMismatch {
            expected,
            actual: bad.input.len(),
        });
    }

    let mut params = init_parameters(shape, spec.seed);
    let mut velocity = vec![0.0; params.len()];
    let mut grad = vec![0.0; params.len()];
    let mut ws = Workspace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut lr = protocol.lr0;
    let mut best = (f64::INFINITY, params.clone());
    let mut since_best = 0;
    let mut since_plateau = 0;
    let mut history = Vec::new();

    for epoch in 0..protocol.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(protocol.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let w = &train_set[i];
                let residual = lstm::forward(shape, &params, &w.input, &mut ws) - w.target;
                epoch_loss += residual.abs();
                // Subgradient of |r| at r = 0 taken as 0.
                let dy = if residual > 0.0 {
                    scale
                } else if residual < 0.0 {
                    -scale
                } else {
                    0.0
                };
                lstm::backward(shape, &params, &w.input, &mut ws, dy, &mut grad);
            }
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = protocol.momentum * *v - lr * g;
                *p += *v;
            }
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = mae_over(shape, &params, val_set, &mut ws);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, lr });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        debug!(epoch, train_loss, val_loss, lr, "epoch");

        if val_loss < best.0 {
            best = (val_loss, params.clone());
            since_best = 0;
            since_plateau = 0;
        } else {
            since_best += 1;
            since_plateau += 1;
            if since_plateau >= protocol.plateau_patience {
                lr = (lr * protocol.plateau_factor).max(protocol.min_lr);
                since_plateau = 0;
                debug!(epoch, lr, "plateau: learning rate reduced");
            }
            if since_best >= protocol.early_stop_patience {
                debug!(epoch, "early stop");
                break;
            }
        }
    }

    Ok(PredictorModel {
        spec: spec.clone(),
        protocol: protocol.clone(),
        parameters: best.1,
        train_history: history,
        cluster_id: None,
    })
}

fn sample_loss(shape: LstmShape, params: &[f64], input: &[f64], target: f64, ws: &mut Workspace) -> f64 {
    (lstm::forward(shape, params, input, ws) - target).abs()
}

/// BPTT gradient of `|forward(input) - target|`.
pub fn analytic_gradient(shape: LstmShape, params: &[f64], input: &[f64], target: f64) -> Vec<f64> {
    let mut ws = Workspace::default();
    let r = lstm::forward(shape, params, input, &mut ws) - target;
    let mut grad = vec![0.0; params.len()];
    let dy = if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
    lstm::backward(shape, params, input, &mut ws, dy, &mut grad);
    grad
}

/// Central finite differences of `|forward(input) - target|` per parameter.
pub fn finite_difference_gradient(
    shape: LstmShape,
    params: &[f64],
    input: &[f64],
    target: f64,
    epsilon: f64,
) -> Vec<f64> {
    let mut ws = Workspace::default();
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            probe[i] = params[i] + epsilon;
            let up = sample_loss(shape, &probe, input, target, &mut ws);
            probe[i] = params[i] - epsilon;
            let down = sample_loss(shape, &probe, input, target, &mut ws);
            probe[i] = params[i];
            (up - down) / (2.0 * epsilon)
        })
        .collect()
}

/// Largest relative disagreement between BPTT and central differences over
/// all parameters, for explicit parameters.
pub fn gradient_check_with(
    shape: LstmShape,
    params: &[f64],
    input: &[f64],
    target: f64,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference epsilon must be positive, got {epsilon}"
        )));
    }
    if params.len() != shape.param_count() {
        return Err(Error::LengthMismatch {
            expected: shape.param_count(),
            actual: params.len(),
        });
    }
    let mut ws = Workspace::default();
    let residual = lstm::forward(shape, params, input, &mut ws) - target;
    let limit = 10.0 * epsilon;
    if residual.abs() <= limit {
        return Err(Error::NearKink {
            residual: residual.abs(),
            limit,
        });
    }
    let analytic = analytic_gradient(shape, params, input, target);
    let numeric = finite_difference_gradient(shape, params, input, target, epsilon);
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-7))
        .fold(0.0, f64::max))
}

/// Gradient check at the spec's seeded initial parameters.
pub fn gradient_check(spec: &PredictorSpec, input: &[f64], target: f64, epsilon: f64) -> Result<f64> {
    let shape = spec.shape();
    if input.len() != spec.window * shape.features {
        return Err(Error::LengthMismatch {
            expected: spec.window * shape.features,
            actual: input.len(),
        });
    }
    gradient_check_with(shape, &init_parameters(shape, spec.seed), input, target, epsilon)
}

/// Outcome of training one predictor per cluster.
#[derive(Debug, Clone)]
pub struct ClusterTraining {
    /// Model serving each cluster. Degenerate clusters map to the global
    /// model (`cluster_id == None`).
    pub models: BTreeMap<usize, PredictorModel>,
    pub window_counts: Vec<usize>,
    pub fallback_clusters: Vec<usize>,
    /// Windows whose target fell outside every clustered segment.
    pub unattributed_windows: usize,
    /// Cells that contributed at least one training window.
    pub training_cells: BTreeSet<String>,
}

/// Trains one model per cluster on the windows whose target lies in a
/// segment assigned to that cluster. Clusters with fewer windows than a
/// batch fall back to a model trained on every window.
pub fn train_per_cluster(
    cluster_model: &ClusterModel,
    segments: &SegmentSet,
    series_set: &[TimeSeries],
    spec: &PredictorSpec,
    protocol: &TrainingProtocol,
) -> Result<ClusterTraining> {
    spec.validate()?;
    protocol.validate()?;
    if segments.len() != cluster_model.assignments.len() {
        return Err(Error::LengthMismatch {
            expected: cluster_model.assignments.len(),
            actual: segments.len(),
        });
    }
    let n = cluster_model.n;
    let mut day_index: HashMap<&str, Vec<(i64, usize)>> = HashMap::new();
    for (seg, &c) in segments.segments().iter().zip(&cluster_model.assignments) {
        day_index
            .entry(seg.source_cell.as_str())
            .or_default()
            .push((seg.start_time, c));
    }
    for days in day_index.values_mut() {
        days.sort_unstable();
    }
    let cluster_of = |cell: &str, t: i64| -> Option<usize> {
        let days = day_index.get(cell)?;
        let pos = days.partition_point(|&(start, _)| start <= t);
        let (start, c) = *days.get(pos.checked_sub(1)?)?;
        (t < start + n as i64).then_some(c)
    };

    let k = cluster_model.k;
    let mut per_cluster: Vec<Vec<Window>> = vec![Vec::new(); k];
    let mut unattributed = 0;
    let mut training_cells = BTreeSet::new();
    for series in series_set {
        let features = featurize(series, &spec.feature_config)?;
        for w in windows_from_features(&features, spec.window, spec.horizon) {
            match cluster_of(&w.source_cell, w.target_time) {
                Some(c) => {
                    training_cells.insert(w.source_cell.clone());
                    per_cluster[c].push(w);
                }
                None => unattributed += 1,
            }
        }
    }
    if unattributed > 0 {
        warn!(unattributed, "windows with targets outside clustered days were skipped");
    }
    let window_counts: Vec<usize> = per_cluster.iter().map(Vec::len).collect();
    let fallback_clusters: Vec<usize> = (0..k)
        .filter(|&c| window_counts[c] < protocol.batch_size.max(2))
        .collect();
    if fallback_clusters.len() == k {
        return Err(Error::AllClustersDegenerate);
    }
    for &c in &fallback_clusters {
        warn!(cluster = c, windows = window_counts[c], "degenerate cluster served by the global model");
    }

    let fit = |windows: Vec<Window>, seed: u64, cluster_id: Option<usize>| -> Result<PredictorModel> {
        let spec = PredictorSpec { seed, ..spec.clone() };
        let (tr, va) = split_windows(windows, protocol.validation_fraction, seed);
        let mut model = train(&spec, protocol, &tr, &va)?;
        model.cluster_id = cluster_id;
        Ok(model)
    };

    let global = if fallback_clusters.is_empty() {
        None
    } else {
        Some(fit(per_cluster.iter().flatten().cloned().collect(), spec.seed, None)?)
    };
    let trained: Vec<(usize, PredictorModel)> = per_cluster
        .into_par_iter()
        .enumerate()
        .filter(|(c, _)| !fallback_clusters.contains(c))
        .map(|(c, windows)| {
            fit(windows, spec.seed.wrapping_add(1 + c as u64), Some(c)).map(|m| (c, m))
        })
        .collect::<Result<_>>()?;
    let mut models: BTreeMap<usize, PredictorModel> = trained.into_iter().collect();
    if let Some(global) = global {
        for &c in &fallback_clusters {
            models.insert(c, global.clone());
        }
    }
    info!(k, windows = window_counts.iter().sum::<usize>(), fallbacks = fallback_clusters.len(), "per-cluster training done");
    Ok(ClusterTraining {
        models,
        window_counts,
        fallback_clusters,
        unattributed_windows: unattributed,
        training_cells,
    })
}
