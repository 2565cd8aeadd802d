//! Time-series k-means: DTW assignment, DBA centroid updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::dba::{dba_average, DbaParams};
use crate::dtw::{dtw_distance, DtwParams};
use crate::error::{Error, Result};
use crate::series::SegmentSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub seed: u64,
    pub dtw: DtwParams,
    /// Inner DBA settings; its `dtw` field is overridden by `dtw` above.
    pub dba_max_iter: usize,
    pub dba_tol: f64,
    /// Independent k-means++ restarts; the lowest-inertia fit is kept.
    pub n_init: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        let dba = DbaParams::default();
        Self {
            max_iter: 100,
            seed: 0,
            dtw: DtwParams::default(),
            dba_max_iter: dba.max_iter,
            dba_tol: dba.tol,
            n_init: 10,
        }
    }
}

impl KMeansParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn dba(&self) -> DbaParams {
        DbaParams {
            max_iter: self.dba_max_iter,
            tol: self.dba_tol,
            dtw: self.dtw,
        }
    }
}

/// A fitted clustering of length-`n` segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    /// Total squared DTW distance of segments to their centroids.
    pub inertia: f64,
    pub dtw_params: DtwParams,
    /// Segment index to cluster index, in training order.
    pub assignments: Vec<usize>,
    pub cluster_inertia: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Inertia after initialization and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    /// Nearest centroid to `window` and its DTW distance; lowest index wins ties.
    pub fn predict(&self, window: &[f64]) -> Result<(usize, f64)> {
        let scores = self.scores(window)?;
        Ok(argmin(&scores))
    }

    /// DTW distance from `window` to every centroid.
    pub fn scores(&self, window: &[f64]) -> Result<Vec<f64>> {
        if window.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: window.len(),
            });
        }
        self.centroids
            .iter()
            .map(|c| dtw_distance(window, c, &self.dtw_params))
            .collect()
    }

    /// Distance of every given segment to the centroid it is assigned to.
    pub fn member_distances<S: AsRef<[f64]> + Sync>(&self, segments: &[S]) -> Result<Vec<f64>> {
        if segments.len() != self.assignments.len() {
            return Err(Error::LengthMismatch {
                expected: self.assignments.len(),
                actual: segments.len(),
            });
        }
        segments
            .par_iter()
            .zip(&self.assignments)
            .map(|(s, &c)| dtw_distance(s.as_ref(), &self.centroids[c], &self.dtw_params))
            .collect()
    }
}

pub(crate) fn argmin(scores: &[f64]) -> (usize, f64) {
    scores
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, s)| if s < best.1 { (i, s) } else { best })
}

/// DTW-nearest centroid of `window`.
pub fn predict_cluster(model: &ClusterModel, window: &[f64]) -> Result<(usize, f64)> {
    model.predict(window)
}

/// Member count per cluster.
pub fn cluster_sizes(model: &ClusterModel) -> Vec<usize> {
    model.sizes.clone()
}

/// Fits `k` clusters with k-means++ seeding.
pub fn fit(segments: &SegmentSet, k: usize, params: &KMeansParams) -> Result<ClusterModel> {
    fit_values(&segments.values(), k, params, None)
}

/// Fits clusters from explicit starting centroids (`initial.len()` is k).
pub fn fit_from(
    segments: &SegmentSet,
    initial: Vec<Vec<f64>>,
    params: &KMeansParams,
) -> Result<ClusterModel> {
    let k = initial.len();
    fit_values(&segments.values(), k, params, Some(initial))
}

pub(crate) fn fit_values<S: AsRef<[f64]> + Sync>(
    values: &[S],
    k: usize,
    params: &KMeansParams,
    initial: Option<Vec<Vec<f64>>>,
) -> Result<ClusterModel> {
    params.dtw.validate()?;
    if values.is_empty() {
        return Err(Error::EmptyInput("segment set"));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if k > values.len() {
        return Err(Error::TooManyClusters {
            k,
            segments: values.len(),
        });
    }
    if params.max_iter == 0 || params.n_init == 0 {
        return Err(Error::InvalidParameter("k-means max_iter and n_init must be >= 1".into()));
    }
    let n = values[0].as_ref().len();
    if let Some(bad) = values.iter().find(|v| v.as_ref().len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: bad.as_ref().len(),
        });
    }

    if let Some(c) = initial {
        if let Some(bad) = c.iter().find(|c| c.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        return lloyd(values, c, params);
    }
    let mut best: Option<ClusterModel> = None;
    for restart in 0..params.n_init {
        let seed = restart_seed(params.seed, restart);
        let model = lloyd(values, plus_plus(values, k, params, seed)?, params)?;
        debug!(restart, inertia = model.inertia, "k-means restart");
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    let best = best.expect("n_init >= 1");
    info!(k, iterations_run = best.iterations_run, inertia = best.inertia, "k-means fitted");
    Ok(best)
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    if restart == 0 {
        seed
    } else {
        seed ^ (restart as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
    }
}

fn lloyd<S: AsRef<[f64]> + Sync>(
    values: &[S],
    mut centroids: Vec<Vec<f64>>,
    params: &KMeansParams,
) -> Result<ClusterModel> {
    let k = centroids.len();
    let n = centroids[0].len();

    let (mut assign, mut dists) = assign_all(values, &centroids, &params.dtw)?;
    repair_empty(&mut assign, &mut dists, &mut centroids, values);
    let mut history = vec![total(&dists)];
    let dba = params.dba();
    let mut converged = false;
    let mut iterations_run = 0;

    for it in 1..=params.max_iter {
        iterations_run = it;
        centroids = (0..k)
            .into_par_iter()
            .map(|c| {
                let members: Vec<&[f64]> = values
                    .iter()
                    .zip(&assign)
                    .filter(|(_, &a)| a == c)
                    .map(|(v, _)| v.as_ref())
                    .collect();
                dba_average(&members, Some(&centroids[c]), &dba).map(|b| b.values)
            })
            .collect::<Result<_>>()?;
        let (new_assign, mut new_dists) = assign_all(values, &centroids, &params.dtw)?;
        let mut new_assign = new_assign;
        let repaired = repair_empty(&mut new_assign, &mut new_dists, &mut centroids, values);
        history.push(total(&new_dists));
        dists = new_dists;
        let unchanged = new_assign == assign;
        assign = new_assign;
        debug!(iteration = it, inertia = history[it], unchanged, "k-means iteration");
        if unchanged && !repaired {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!(k, max_iter = params.max_iter, "k-means stopped at max_iter before assignments settled");
    }

    let mut sizes = vec![0; k];
    let mut cluster_inertia = vec![0.0; k];
    for (&c, &d) in assign.iter().zip(&dists) {
        sizes[c] += 1;
        cluster_inertia[c] += d * d;
    }
    let inertia = total(&dists);
    Ok(ClusterModel {
        k,
        n,
        seed: params.seed,
        centroids,
        sizes,
        inertia,
        dtw_params: params.dtw,
        assignments: assign,
        cluster_inertia,
        iterations_run,
        converged,
        inertia_history: history,
    })
}

fn total(dists: &[f64]) -> f64 {
    dists.iter().map(|d| d * d).sum()
}

fn assign_all<S: AsRef<[f64]> + Sync>(
    values: &[S],
    centroids: &[Vec<f64>],
    params: &DtwParams,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let pairs: Vec<(usize, f64)> = values
        .par_iter()
        .map(|v| {
            let scores = centroids
                .iter()
                .map(|c| dtw_distance(v.as_ref(), c, params))
                .collect::<Result<Vec<_>>>()?;
            Ok(argmin(&scores))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Gives each empty cluster the segment farthest from its own centroid as a
/// singleton. Returns whether anything changed.
fn repair_empty<S: AsRef<[f64]>>(
    assign: &mut [usize],
    dists: &mut [f64],
    centroids: &mut [Vec<f64>],
    values: &[S],
) -> bool {
    let k = centroids.len();
    let mut repaired = false;
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assign.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return repaired;
        };
        let donor = (0..assign.len())
            .filter(|&i| sizes[assign[i]] > 1)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= segment count leaves a cluster with two members");
        debug!(cluster = empty, segment = donor, "repairing empty cluster");
        centroids[empty] = values[donor].as_ref().to_vec();
        assign[donor] = empty;
        dists[donor] = 0.0;
        repaired = true;
    }
}

/// k-means++ seeding with squared DTW distances.
fn plus_plus<S: AsRef<[f64]> + Sync>(
    values: &[S],
    k: usize,
    params: &KMeansParams,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..values.len())];
    let mut nearest: Vec<f64> = values
        .par_iter()
        .map(|v| dtw_distance(v.as_ref(), values[chosen[0]].as_ref(), &params.dtw).map(|d| d * d))
        .collect::<Result<_>>()?;
    while chosen.len() < k {
        let weight: f64 = nearest.iter().sum();
        let next = if weight > 0.0 {
            let mut target = rng.random::<f64>() * weight;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
            pick.expect("positive total weight")
        } else {
            // All remaining segments duplicate a chosen one.
            (0..values.len())
                .find(|i| !chosen.contains(i))
                .expect("k <= segment count")
        };
        chosen.push(next);
        let newest = values[next].as_ref();
        let update: Vec<f64> = values
            .par_iter()
            .map(|v| dtw_distance(v.as_ref(), newest, &params.dtw).map(|d| d * d))
            .collect::<Result<_>>()?;
        for (n, u) in nearest.iter_mut().zip(update) {
            *n = n.min(u);
        }
    }
    Ok(chosen.into_iter().map(|i| values[i].as_ref().to_vec()).collect())
}
