//! Online cluster assignment and model dispatch on unseen streams.
//!
//! At every reevaluation step the trailing `n`-window of the output channel
//! is matched to the DTW-nearest centroid, and that cluster's predictor
//! forecasts the next value. Streams without training statistics are scaled
//! with a running min-max envelope over the values seen so far; the first
//! `n` forecasts fall back to seasonal-naive and are flagged as warmup.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::dba::{dba_average, DbaParams};
use crate::dtw::dtw_distance;
use crate::error::{Error, Result};
use crate::kmeans::{argmin, fit_from, ClusterModel, KMeansParams};
use crate::metrics::quantile;
use crate::predictor::{lstm, PredictorKind, PredictorModel};
use crate::series::{
    format_hour, hour_of_day, is_weekend, FeatureSource, MinMax, NormStats, PeakProfile, Segment, SegmentSet,
    TimeSeries, HOURS_PER_DAY,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignMode {
    /// The completed window before the forecast target.
    #[default]
    Trailing,
    /// The calendar day containing the target. Reads future values; kept for
    /// comparison only.
    TargetDay,
}

impl fmt::Display for AssignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssignMode::Trailing => "trailing",
            AssignMode::TargetDay => "target-day",
        })
    }
}

impl FromStr for AssignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trailing" => Ok(AssignMode::Trailing),
            "target-day" | "target_day" => Ok(AssignMode::TargetDay),
            other => Err(Error::InvalidParameter(format!(
                "unknown assign mode `{other}` (expected trailing or target-day)"
            ))),
        }
    }
}

/// When a reevaluation's best score exceeds `threshold`, the trailing
/// segment is out of distribution and gets buffered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodPolicy {
    pub threshold: f64,
    /// Quantile of training self-distances the threshold came from, if any.
    pub quantile_source: Option<f64>,
    pub buffer_min_segments: usize,
}

impl OodPolicy {
    pub fn new(threshold: f64, buffer_min_segments: usize) -> Result<Self> {
        let p = Self {
            threshold,
            quantile_source: None,
            buffer_min_segments,
        };
        p.validate()?;
        Ok(p)
    }

    /// Threshold at quantile `q` of the training segments' distances to
    /// their own centroids.
    pub fn from_training(
        model: &ClusterModel,
        segments: &SegmentSet,
        q: f64,
        buffer_min_segments: usize,
    ) -> Result<Self> {
        let dists = model.member_distances(&segments.values())?;
        let threshold = quantile(&dists, q)
            .ok_or_else(|| Error::InvalidParameter(format!("quantile {q} outside [0, 1]")))?;
        let p = Self {
            threshold,
            quantile_source: Some(q),
            buffer_min_segments,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "OOD threshold must be positive and finite, got {}",
                self.threshold
            )));
        }
        if self.buffer_min_segments == 0 {
            return Err(Error::InvalidParameter("OOD buffer needs at least 1 segment".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamOptions {
    /// Reassess the cluster every `cadence` steps.
    pub cadence: usize,
    pub assign_mode: AssignMode,
    pub ood: Option<OodPolicy>,
    /// Fixed scaling for a stream whose cell has training statistics.
    pub stats: Option<NormStats>,
    /// Compare a window starting at hour `h` with centroids rotated by
    /// `h mod n`, for centroids learned from midnight-aligned segments.
    pub phase_aligned: bool,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            cadence: 1,
            assign_mode: AssignMode::Trailing,
            ood: None,
            stats: None,
            phase_aligned: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Index of the forecast target in the stream; equal to the stream
    /// length for the final out-of-sample forecast.
    pub step: usize,
    pub time: i64,
    pub reevaluated: bool,
    /// Scores of the most recent reevaluation, one per centroid.
    pub scores: Vec<f64>,
    pub chosen: usize,
    /// Forecast in the stream's raw units.
    pub prediction: f64,
    pub truth: Option<f64>,
    /// Served by the seasonal-naive fallback while the envelope settles.
    pub warmup: bool,
    pub ood: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentTrace {
    pub cell_id: String,
    pub n: usize,
    pub reevaluation_cadence: usize,
    pub assign_mode: AssignMode,
    pub steps: Vec<StepRecord>,
    /// Non-overlapping out-of-distribution segments, in envelope scale.
    /// With phase alignment they are rotated to start at midnight.
    pub ood_buffer: Vec<Segment>,
}

impl AssignmentTrace {
    pub fn k(&self) -> usize {
        self.steps.first().map_or(0, |s| s.scores.len())
    }

    pub fn ood_segments(&self) -> SegmentSet {
        self.ood_buffer.iter().cloned().collect()
    }

    /// `step,time,score_0..score_{k-1},chosen,prediction,truth,warmup,ood,reevaluated`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(File::create(path).map_err(io)?);
        let mut header = String::from("step,time");
        for c in 0..self.k() {
            header.push_str(&format!(",score_{c}"));
        }
        header.push_str(",chosen,prediction,truth,warmup,ood,reevaluated");
        writeln!(w, "{header}").map_err(io)?;
        for s in &self.steps {
            let mut line = format!("{},{}", s.step, format_hour(s.time));
            for v in &s.scores {
                line.push_str(&format!(",{v}"));
            }
            let truth = s.truth.map(|t| t.to_string()).unwrap_or_default();
            line.push_str(&format!(
                ",{},{},{},{},{},{}",
                s.chosen, s.prediction, truth, s.warmup, s.ood, s.reevaluated
            ));
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Causal view of a raw stream: scaling and engineered flags at step `t`
/// use only indices below the visible limit.
struct StreamView<'a> {
    stream: &'a TimeSeries,
    stats: Option<&'a NormStats>,
    /// Running min/max per channel; `prefix[c][i]` covers indices `< i + 1`.
    prefix: BTreeMap<&'a str, Vec<MinMax>>,
    peak_sums: [f64; HOURS_PER_DAY as usize],
    peak_counts: [usize; HOURS_PER_DAY as usize],
    peak_seen: usize,
}

impl<'a> StreamView<'a> {
    fn new(stream: &'a TimeSeries, stats: Option<&'a NormStats>) -> Self {
        let prefix = stream
            .channels()
            .iter()
            .map(|c| {
                let mut acc = MinMax {
                    min: f64::INFINITY,
                    max: f64::NEG_INFINITY,
                };
                let running = c
                    .values
                    .iter()
                    .map(|&v| {
                        acc.min = acc.min.min(v);
                        acc.max = acc.max.max(v);
                        acc
                    })
                    .collect();
                (c.name.as_str(), running)
            })
            .collect();
        Self {
            stream,
            stats,
            prefix,
            peak_sums: [0.0; HOURS_PER_DAY as usize],
            peak_counts: [0; HOURS_PER_DAY as usize],
            peak_seen: 0,
        }
    }

    /// Scaling of `channel` given the first `visible` values.
    fn scale(&self, channel: &str, visible: usize) -> Result<MinMax> {
        if let Some(stats) = self.stats {
            return stats
                .get(channel)
                .copied()
                .ok_or_else(|| Error::MissingChannel(format!("no normalization stats for `{channel}`")));
        }
        let running = self
            .prefix
            .get(channel)
            .ok_or_else(|| Error::MissingChannel(channel.to_string()))?;
        Ok(running[visible - 1])
    }

    fn values(&self, channel: &str) -> Result<&'a [f64]> {
        self.stream
            .channel(channel)
            .ok_or_else(|| Error::MissingChannel(format!("stream lacks channel `{channel}`")))
    }

    /// Scaled output channel over `range`, with `visible` values known.
    fn output_window(&self, range: std::ops::Range<usize>, visible: usize) -> Result<Vec<f64>> {
        let name = self.stream.output_name();
        let mm = self.scale(name, visible)?;
        Ok(self.values(name)?[range].iter().map(|&v| mm.apply(v)).collect())
    }

    fn peak_profile(&mut self, visible: usize) -> PeakProfile {
        let out = self.stream.output();
        while self.peak_seen < visible {
            let h = hour_of_day(self.stream.time_at(self.peak_seen));
            self.peak_sums[h] += out[self.peak_seen];
            self.peak_counts[h] += 1;
            self.peak_seen += 1;
        }
        PeakProfile::from_sums(&self.peak_sums, &self.peak_counts)
    }

    /// Model input rows for `range` (time-major) under `sources`.
    fn input(
        &mut self,
        sources: &[FeatureSource],
        range: std::ops::Range<usize>,
        visible: usize,
    ) -> Result<Vec<f64>> {
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(sources.len());
        for src in sources {
            let col = match src {
                FeatureSource::Channel(name) | FeatureSource::Handover(name) => {
                    let mm = self.scale(name, visible)?;
                    self.values(name)?[range.clone()].iter().map(|&v| mm.apply(v)).collect()
                }
                FeatureSource::PeakFlag => {
                    let profile = self.peak_profile(visible);
                    range
                        .clone()
                        .map(|i| f64::from(u8::from(profile.is_peak(self.stream.time_at(i)))))
                        .collect()
                }
                FeatureSource::WeekendFlag => range
                    .clone()
                    .map(|i| f64::from(u8::from(is_weekend(self.stream.time_at(i)))))
                    .collect(),
            };
            columns.push(col);
        }
        let mut rows = Vec::with_capacity(range.len() * sources.len());
        for r in 0..range.len() {
            rows.extend(columns.iter().map(|c| c[r]));
        }
        Ok(rows)
    }
}

fn check_models(cluster_model: &ClusterModel, models: &BTreeMap<usize, PredictorModel>) -> Result<usize> {
    let mut horizon = None;
    for m in models.values() {
        if m.spec.window != cluster_model.n {
            return Err(Error::InvalidParameter(format!(
                "predictor window {} differs from segment length {}",
                m.spec.window, cluster_model.n
            )));
        }
        match horizon {
            None => horizon = Some(m.spec.horizon),
            Some(h) if h != m.spec.horizon => {
                return Err(Error::InvalidParameter("predictors disagree on horizon".into()))
            }
            _ => {}
        }
    }
    horizon.ok_or(Error::MissingModel(0))
}

/// Streams `stream` through the cluster model and per-cluster predictors.
///
/// Steps run from the first forecastable index to one past the end; the last
/// step is a pure forecast without ground truth.
pub fn run_stream(
    cluster_model: &ClusterModel,
    models: &BTreeMap<usize, PredictorModel>,
    stream: &TimeSeries,
    options: &StreamOptions,
) -> Result<AssignmentTrace> {
    let n = cluster_model.n;
    if options.cadence == 0 {
        return Err(Error::InvalidParameter("cadence must be >= 1".into()));
    }
    if let Some(p) = &options.ood {
        p.validate()?;
    }
    let m = check_models(cluster_model, models)?;
    let len = stream.len();
    let first = n + m - 1;
    if len < first {
        return Err(Error::InsufficientBuffer { have: len, need: first });
    }
    let fixed_scale = options.stats.is_some();
    let mut view = StreamView::new(stream, options.stats.as_ref());
    let mut sources_cache: BTreeMap<usize, Vec<FeatureSource>> = BTreeMap::new();
    let mut ws = lstm::Workspace::default();
    let mut steps = Vec::with_capacity(len + 1 - first);
    let mut buffer: Vec<Segment> = Vec::new();
    let mut last_buffered: Option<usize> = None;
    let mut scores: Vec<f64> = Vec::new();
    let mut chosen = 0;
    let raw_out = stream.output();

    for t in first..=len {
        // Inputs cover [lo, visible); nothing at or after `visible` is read
        // in trailing mode.
        let visible = t + 1 - m;
        let lo = visible - n;
        let reevaluated = (t - first).is_multiple_of(options.cadence);
        let mut ood = false;
        if reevaluated {
            let (window, start) = match options.assign_mode {
                AssignMode::TargetDay if t < len => {
                    let day_lo = t - hour_of_day(stream.time_at(t)).min(t);
                    if day_lo + n <= len {
                        (view.output_window(day_lo..day_lo + n, day_lo + n)?, day_lo)
                    } else {
                        (view.output_window(lo..visible, visible)?, lo)
                    }
                }
                _ => (view.output_window(lo..visible, visible)?, lo),
            };
            let shift = if options.phase_aligned {
                stream.time_at(start).rem_euclid(n as i64) as usize
            } else {
                0
            };
            scores = phase_scores(cluster_model, &window, shift)?;
            let (c, best) = argmin(&scores);
            chosen = c;
            if let Some(policy) = &options.ood {
                if best > policy.threshold {
                    ood = true;
                    let overlaps = last_buffered.is_some_and(|s| lo < s + n);
                    if !overlaps {
                        debug!(step = t, score = best, "buffering out-of-distribution segment");
                        last_buffered = Some(lo);
                        let mut values = window;
                        values.rotate_right(shift);
                        buffer.push(Segment {
                            source_cell: stream.cell_id().to_string(),
                            day_index: lo / n,
                            start_time: stream.time_at(lo) - shift as i64,
                            values,
                        });
                    }
                }
            }
        }

        let model = models.get(&chosen).ok_or(Error::MissingModel(chosen))?;
        let warmup = !fixed_scale && t < first + n;
        let prediction = if warmup {
            raw_out[t - n]
        } else {
            let sources = sources_cache
                .entry(chosen)
                .or_insert_with(|| model.spec.feature_config.sources());
            let input = view.input(sources, lo..visible, visible)?;
            let scaled = match model.spec.kind {
                PredictorKind::Lstm => lstm::forward(model.spec.shape(), &model.parameters, &input, &mut ws),
                PredictorKind::SeasonalNaive => model.forward(&input)?,
            };
            view.scale(stream.output_name(), visible)?.invert(scaled)
        };
        steps.push(StepRecord {
            step: t,
            time: stream.time_at(t),
            reevaluated,
            scores: scores.clone(),
            chosen,
            prediction,
            truth: raw_out.get(t).copied(),
            warmup,
            ood,
        });
    }
    if !buffer.is_empty() {
        info!(cell = %stream.cell_id(), segments = buffer.len(), "out-of-distribution segments buffered");
    }
    Ok(AssignmentTrace {
        cell_id: stream.cell_id().to_string(),
        n,
        reevaluation_cadence: options.cadence,
        assign_mode: options.assign_mode,
        steps,
        ood_buffer: buffer,
    })
}

/// DTW distance from `window` to every centroid rotated left by `shift`.
pub fn phase_scores(cluster_model: &ClusterModel, window: &[f64], shift: usize) -> Result<Vec<f64>> {
    if shift == 0 {
        return cluster_model.scores(window);
    }
    if window.len() != cluster_model.n {
        return Err(Error::LengthMismatch {
            expected: cluster_model.n,
            actual: window.len(),
        });
    }
    let shift = shift % cluster_model.n;
    let mut rotated = vec![0.0; cluster_model.n];
    cluster_model
        .centroids
        .iter()
        .map(|c| {
            rotated[..c.len() - shift].copy_from_slice(&c[shift..]);
            rotated[c.len() - shift..].copy_from_slice(&c[..shift]);
            dtw_distance(window, &rotated, &cluster_model.dtw_params)
        })
        .collect()
}

/// Runs several streams concurrently against shared models.
pub fn run_streams(
    cluster_model: &ClusterModel,
    models: &BTreeMap<usize, PredictorModel>,
    streams: &[TimeSeries],
    options: &StreamOptions,
) -> Result<Vec<AssignmentTrace>> {
    streams
        .par_iter()
        .map(|s| run_stream(cluster_model, models, s, options))
        .collect()
}

/// Nearest centroid to a single window.
pub fn assign_window(cluster_model: &ClusterModel, trailing: &[f64]) -> Result<(usize, f64)> {
    cluster_model.predict(trailing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub cluster: usize,
    pub count: usize,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_cluster: Vec<ClusterScore>,
    pub weighted_mae: f64,
    /// Flat MAE over every scored step; equal to `weighted_mae` up to rounding.
    pub overall_mae: f64,
    pub scored_steps: usize,
    pub warmup_steps: usize,
}

/// Per-cluster and weighted MAE over the steps with ground truth, warmup
/// excluded.
pub fn evaluate(trace: &AssignmentTrace) -> Result<EvaluationReport> {
    let mut per: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let mut warmup_steps = 0;
    let mut total = 0.0;
    let mut count = 0;
    for s in &trace.steps {
        let Some(truth) = s.truth else { continue };
        if s.warmup {
            warmup_steps += 1;
            continue;
        }
        let err = (s.prediction - truth).abs();
        let e = per.entry(s.chosen).or_default();
        e.0 += 1;
        e.1 += err;
        total += err;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyInput("trace steps with ground truth"));
    }
    let per_cluster: Vec<ClusterScore> = per
        .into_iter()
        .map(|(cluster, (c, sum))| ClusterScore {
            cluster,
            count: c,
            mae: sum / c as f64,
        })
        .collect();
    Ok(EvaluationReport {
        weighted_mae: weighted_mae(&per_cluster),
        overall_mae: total / count as f64,
        scored_steps: count,
        warmup_steps,
        per_cluster,
    })
}

/// `sum_k count_k / sum(count) * mae_k`.
pub fn weighted_mae(per_cluster: &[ClusterScore]) -> f64 {
    let total: usize = per_cluster.iter().map(|c| c.count).sum();
    if total == 0 {
        return f64::NAN;
    }
    per_cluster
        .iter()
        .map(|c| c.count as f64 / total as f64 * c.mae)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recluster {
    pub model: ClusterModel,
    /// Index of the cluster seeded from the buffer (the old `k`).
    pub new_cluster: usize,
    /// DBA average of the buffered segments.
    pub buffer_barycenter: Vec<f64>,
    /// DTW distance from the buffer barycenter to the nearest old centroid.
    pub barycenter_distance: f64,
    /// The buffer sits within the OOD threshold of an existing centroid, so
    /// the new cluster duplicates it.
    pub degenerate: bool,
}

/// Refits with `k + 1` clusters over the original and buffered segments,
/// seeded from the old centroids plus the buffer's DBA average.
pub fn ood_recluster(
    original: &SegmentSet,
    buffered: &SegmentSet,
    old_model: &ClusterModel,
    params: &KMeansParams,
    policy: &OodPolicy,
) -> Result<Recluster> {
    policy.validate()?;
    let need = policy.buffer_min_segments.max(1);
    if buffered.len() < need {
        return Err(Error::InsufficientBuffer {
            have: buffered.len(),
            need,
        });
    }
    let dba = DbaParams {
        max_iter: params.dba_max_iter,
        tol: params.dba_tol,
        dtw: params.dtw,
    };
    let bary = dba_average(&buffered.values(), None, &dba)?;
    let barycenter_distance = old_model
        .centroids
        .iter()
        .map(|c| dtw_distance(&bary.values, c, &params.dtw))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let degenerate = barycenter_distance <= policy.threshold;
    if degenerate {
        warn!(distance = barycenter_distance, threshold = policy.threshold, "buffer duplicates an existing cluster");
    }
    let mut initial = old_model.centroids.clone();
    initial.push(bary.values.clone());
    let model = fit_from(&original.union(buffered)?, initial, params)?;
    info!(k = model.k, degenerate, "reclustered with buffered segments");
    Ok(Recluster {
        model,
        new_cluster: old_model.k,
        buffer_barycenter: bary.values,
        barycenter_distance,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtw::DtwParams;
    use crate::predictor::PredictorSpec;
    use crate::series::FeatureConfig;

    fn model_with(centroids: Vec<Vec<f64>>) -> ClusterModel {
        let k = centroids.len();
        ClusterModel {
            k,
            n: centroids[0].len(),
            seed: 0,
            centroids,
            sizes: vec![1; k],
            inertia: 0.0,
            dtw_params: DtwParams::default(),
            assignments: (0..k).collect(),
            cluster_inertia: vec![0.0; k],
            iterations_run: 0,
            converged: true,
            inertia_history: vec![],
        }
    }

    fn naive_models(k: usize, n: usize) -> BTreeMap<usize, PredictorModel> {
        (0..k)
            .map(|c| {
                let mut spec = PredictorSpec::seasonal_naive(FeatureConfig::uni("y"));
                spec.window = n;
                (c, PredictorModel::seasonal_naive(spec, Some(c)))
            })
            .collect()
    }

    #[test]
    fn assign_window_examples() {
        let m = model_with(vec![vec![0.0; 4], vec![1.0; 4], vec![0.5, 0.5, 0.5, 0.5], vec![0.0, 1.0, 0.0, 1.0]]);
        assert_eq!(assign_window(&m, &[0.0, 1.0, 0.0, 1.0]).unwrap(), (3, 0.0));
        assert_eq!(assign_window(&m, &[0.9; 4]).unwrap().0, 1);
        let tie = model_with(vec![vec![0.0; 2], vec![1.0; 2]]);
        assert_eq!(assign_window(&tie, &[0.5; 2]).unwrap().0, 0);
        assert!(assign_window(&m, &[0.0; 3]).is_err());
    }

    #[test]
    fn stream_matching_one_centroid_stays_there() {
        let day = vec![0.0, 1.0, 0.5, 0.25];
        let m = model_with(vec![vec![0.3; 4], vec![1.0, 0.0, 1.0, 0.0], day.clone()]);
        let values: Vec<f64> = day.iter().cycle().take(16).copied().collect();
        let stream = TimeSeries::univariate("s", 0, "y", values.clone()).unwrap();
        let trace = run_stream(&m, &naive_models(3, 4), &stream, &StreamOptions::default()).unwrap();
        assert_eq!(trace.steps.len(), 16 - 4 + 1);
        assert!(trace.steps.iter().all(|s| s.chosen == 2 && s.scores[2] == 0.0));
        assert!(trace.steps[..4].iter().all(|s| s.warmup));
        assert!(trace.steps.last().unwrap().truth.is_none());

        let plain = StreamOptions { phase_aligned: false, ..Default::default() };
        let trace = run_stream(&m, &naive_models(3, 4), &stream, &plain).unwrap();
        for s in &trace.steps {
            let trailing = &values[s.step - 4..s.step];
            let mm = MinMax::of(&values[..s.step]);
            let window: Vec<f64> = trailing.iter().map(|&v| mm.apply(v)).collect();
            assert_eq!(s.chosen, m.predict(&window).unwrap().0);
            assert_eq!(s.chosen, argmin(&s.scores).0);
            assert_eq!(s.prediction, values[s.step - 4]);
        }
        assert!(trace.steps.iter().filter(|s| s.step % 4 == 0).all(|s| s.chosen == 2));
    }

    #[test]
    fn phase_scores_rotate_centroids() {
        let m = model_with(vec![vec![0.0, 1.0, 2.0, 3.0]]);
        assert_eq!(phase_scores(&m, &[2.0, 3.0, 0.0, 1.0], 2).unwrap(), vec![0.0]);
        assert_eq!(phase_scores(&m, &[0.0, 1.0, 2.0, 3.0], 4).unwrap(), vec![0.0]);
        assert!(phase_scores(&m, &[0.0; 3], 1).is_err());
    }

    #[test]
    fn cadence_controls_reevaluation() {
        let m = model_with(vec![vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0, 0.0]]);
        let values: Vec<f64> = (0..20).map(|i| (i % 3) as f64).collect();
        let stream = TimeSeries::univariate("s", 0, "y", values).unwrap();
        let opts = StreamOptions { cadence: 100, ..Default::default() };
        let trace = run_stream(&m, &naive_models(2, 4), &stream, &opts).unwrap();
        assert_eq!(trace.steps.iter().filter(|s| s.reevaluated).count(), 1);
        let first = trace.steps[0].chosen;
        assert!(trace.steps.iter().all(|s| s.chosen == first));

        let opts = StreamOptions { cadence: 4, ..Default::default() };
        let trace = run_stream(&m, &naive_models(2, 4), &stream, &opts).unwrap();
        for s in &trace.steps {
            assert_eq!(s.reevaluated, (s.step - 4) % 4 == 0);
        }
        assert!(run_stream(&m, &naive_models(2, 4), &stream, &StreamOptions { cadence: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn missing_model_is_an_error() {
        let m = model_with(vec![vec![0.0; 4], vec![1.0, 0.0, 1.0, 0.0]]);
        let mut models = naive_models(2, 4);
        models.remove(&1);
        let stream = TimeSeries::univariate("s", 0, "y", vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(matches!(
            run_stream(&m, &models, &stream, &StreamOptions::default()),
            Err(Error::MissingModel(1))
        ));
    }

    fn record(chosen: usize, prediction: f64, truth: f64) -> StepRecord {
        StepRecord {
            step: 0,
            time: 0,
            reevaluated: true,
            scores: vec![],
            chosen,
            prediction,
            truth: Some(truth),
            warmup: false,
            ood: false,
        }
    }

    fn trace_of(steps: Vec<StepRecord>) -> AssignmentTrace {
        AssignmentTrace {
            cell_id: "c".into(),
            n: 24,
            reevaluation_cadence: 1,
            assign_mode: AssignMode::Trailing,
            steps,
            ood_buffer: vec![],
        }
    }

    #[test]
    fn evaluation_examples() {
        let perfect = trace_of((0..5).map(|i| record(0, i as f64, i as f64)).collect());
        assert_eq!(evaluate(&perfect).unwrap().weighted_mae, 0.0);

        let mut steps: Vec<StepRecord> = (0..30).map(|_| record(0, 0.1, 0.0)).collect();
        steps.extend((0..10).map(|_| record(1, 0.0, 0.2)));
        let r = evaluate(&trace_of(steps)).unwrap();
        assert!((r.weighted_mae - 0.125).abs() < 1e-12);
        assert!((r.overall_mae - 0.125).abs() < 1e-12);
        assert_eq!(r.per_cluster.len(), 2);
        assert_eq!(r.per_cluster[1].count, 10);

        let mut warm = record(0, 5.0, 0.0);
        warm.warmup = true;
        let r = evaluate(&trace_of(vec![warm, record(0, 1.0, 1.5)])).unwrap();
        assert_eq!(r.warmup_steps, 1);
        assert_eq!(r.weighted_mae, 0.5);
        assert!(evaluate(&trace_of(vec![])).is_err());
    }

    #[test]
    fn ood_policy_validation() {
        assert!(OodPolicy::new(0.0, 1).is_err());
        assert!(OodPolicy::new(1.0, 0).is_err());
        assert!(OodPolicy::new(0.5, 2).is_ok());
    }

    #[test]
    fn assign_mode_parsing() {
        assert_eq!("trailing".parse::<AssignMode>().unwrap(), AssignMode::Trailing);
        assert_eq!("Target-Day".parse::<AssignMode>().unwrap(), AssignMode::TargetDay);
        assert!("future".parse::<AssignMode>().is_err());
        assert_eq!(AssignMode::TargetDay.to_string(), "target-day");
    }
}
