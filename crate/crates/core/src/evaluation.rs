//! Held-out-cell experiments: k sweeps over feature configurations and
//! single-cell baselines.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::adaptive::{evaluate, run_stream, AssignmentTrace, EvaluationReport, StreamOptions};
use crate::error::{Error, Result};
use crate::kmeans::{fit, ClusterModel, KMeansParams};
use crate::predictor::{train_per_cluster, ClusterTraining, PredictorSpec, TrainingProtocol};
use crate::series::{
    consolidate, normalize, ran_channels, segmentize, FeatureConfig, FeatureVariant, NormStats,
    SeasonalityConfig, SegmentSet, TimeSeries,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seasonality: SeasonalityConfig,
    pub kmeans: KMeansParams,
    pub hidden_size: usize,
    pub protocol: TrainingProtocol,
    pub stream: StreamOptions,
    /// Pearson threshold for the `ran` channel filter.
    pub correlation_threshold: f64,
    /// Incoming and outgoing handover channel names.
    pub handover: Option<(String, String)>,
    pub align_midnight: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seasonality: SeasonalityConfig::default(),
            kmeans: KMeansParams::default(),
            hidden_size: 48,
            protocol: TrainingProtocol::default(),
            stream: StreamOptions::default(),
            correlation_threshold: 0.8,
            handover: Some(("ho_in".into(), "ho_out".into())),
            align_midnight: true,
            seed: 0,
        }
    }
}

/// Training cells scaled with their own statistics and cut into segments.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub normalized: Vec<TimeSeries>,
    pub stats: BTreeMap<String, NormStats>,
    pub segments: SegmentSet,
}

pub fn prepare(train: &[TimeSeries], config: &ExperimentConfig) -> Result<Prepared> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training cells"));
    }
    let mut normalized = Vec::with_capacity(train.len());
    let mut stats = BTreeMap::new();
    let mut per_cell = Vec::with_capacity(train.len());
    for s in train {
        let norm = normalize(s, None)?;
        per_cell.push(segmentize(&norm.series, config.seasonality, config.align_midnight).segments);
        stats.insert(s.cell_id().to_string(), norm.stats);
        normalized.push(norm.series);
    }
    let segments = consolidate(per_cell)?;
    if segments.is_empty() {
        return Err(Error::EmptyInput("segments (every training cell is shorter than one cycle)"));
    }
    Ok(Prepared {
        normalized,
        stats,
        segments,
    })
}

/// Resolves `variant` against the training cells' channels.
pub fn feature_config(
    variant: FeatureVariant,
    prepared: &Prepared,
    config: &ExperimentConfig,
) -> Result<FeatureConfig> {
    let output = prepared.normalized[0].output_name().to_string();
    let handover = config.handover.as_ref().map(|(i, o)| (i.as_str(), o.as_str()));
    let extras = if variant.uses_ran() {
        let exclude: Vec<&str> = handover.map(|(i, o)| vec![i, o]).unwrap_or_default();
        ran_channels(&prepared.normalized, config.correlation_threshold, &exclude)?
            .extras()
            .to_vec()
    } else {
        Vec::new()
    };
    FeatureConfig::resolve(variant, output, &extras, handover)
}

pub fn cluster(prepared: &Prepared, k: usize, config: &ExperimentConfig) -> Result<ClusterModel> {
    fit(&prepared.segments, k, &config.kmeans.with_seed(config.seed))
}

/// Outcome of one (k, configuration) cell of a sweep.
#[derive(Debug, Clone)]
pub struct HoldoutRun {
    pub k: usize,
    pub variant: FeatureVariant,
    pub feature_config: FeatureConfig,
    pub training: ClusterTraining,
    pub trace: AssignmentTrace,
    pub report: EvaluationReport,
}

/// Trains per-cluster predictors for `variant` and streams `holdout`.
pub fn run_variant(
    prepared: &Prepared,
    cluster_model: &ClusterModel,
    variant: FeatureVariant,
    holdout: &TimeSeries,
    config: &ExperimentConfig,
) -> Result<HoldoutRun> {
    let feature_config = feature_config(variant, prepared, config)?;
    let spec = PredictorSpec {
        window: config.seasonality.n,
        horizon: config.seasonality.m,
        ..PredictorSpec::lstm(feature_config.clone(), config.hidden_size, config.seed)
    };
    let training = train_per_cluster(
        cluster_model,
        &prepared.segments,
        &prepared.normalized,
        &spec,
        &config.protocol,
    )?;
    audit_provenance(holdout.cell_id(), &prepared.segments, &training)?;
    let trace = run_stream(cluster_model, &training.models, holdout, &config.stream)?;
    let report = evaluate(&trace)?;
    info!(k = cluster_model.k, config = %variant, mae = report.weighted_mae, "holdout evaluated");
    Ok(HoldoutRun {
        k: cluster_model.k,
        variant,
        feature_config,
        training,
        trace,
        report,
    })
}

/// Fails when the held-out cell contributed any segment or training window.
pub fn audit_provenance(holdout_cell: &str, segments: &SegmentSet, training: &ClusterTraining) -> Result<()> {
    let leaked = segments.segments().iter().any(|s| s.source_cell == holdout_cell)
        || training.training_cells.contains(holdout_cell);
    if leaked {
        return Err(Error::HoldoutLeak(holdout_cell.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub config: FeatureVariant,
    pub weighted_mae: f64,
    pub overall_mae: f64,
    pub scored_steps: usize,
    pub fallback_clusters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub train_cell: String,
    pub test_cell: String,
    pub config: FeatureVariant,
    pub mae: f64,
    /// The framework's score on the same test cell, when known.
    pub framework_mae: Option<f64>,
    /// `framework_mae / mae`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub holdout_cell: String,
    pub rows: Vec<SweepRow>,
    pub baselines: Vec<BaselineResult>,
}

impl SweepResult {
    pub fn row(&self, k: usize, config: FeatureVariant) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.k == k && r.config == config)
    }

    /// Plot-ready `k,config,metric,value` rows. Baselines use `k = 1` and
    /// a `baseline_<train cell>` metric.
    pub fn long_format(&self) -> Vec<(usize, String, String, f64)> {
        let mut out = Vec::new();
        for r in &self.rows {
            let c = r.config.to_string();
            out.push((r.k, c.clone(), "weighted_mae".into(), r.weighted_mae));
            out.push((r.k, c.clone(), "overall_mae".into(), r.overall_mae));
            out.push((r.k, c, "scored_steps".into(), r.scored_steps as f64));
        }
        for b in &self.baselines {
            out.push((1, b.config.to_string(), format!("baseline_{}", b.train_cell), b.mae));
            if let Some(ratio) = b.ratio {
                out.push((1, b.config.to_string(), format!("ratio_{}", b.train_cell), ratio));
            }
        }
        out
    }

    pub fn write_long_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "k,config,metric,value").map_err(io)?;
        for (k, c, m, v) in self.long_format() {
            writeln!(w, "{k},{c},{m},{v}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Weighted MAE on `holdout` for every `(k, config)` pair, plus single-cell
/// baselines trained on each of `baseline_cells` with k = 1.
pub fn sweep_k(
    train: &[TimeSeries],
    holdout: &TimeSeries,
    ks: &[usize],
    variants: &[FeatureVariant],
    baseline_cells: &[String],
    config: &ExperimentConfig,
) -> Result<SweepResult> {
    if ks.is_empty() || variants.is_empty() {
        return Err(Error::EmptyInput("k values or configurations"));
    }
    if train.iter().any(|s| s.cell_id() == holdout.cell_id()) {
        return Err(Error::HoldoutLeak(holdout.cell_id().to_string()));
    }
    let prepared = prepare(train, config)?;
    let mut rows = Vec::new();
    for &k in ks {
        let model = cluster(&prepared, k, config)?;
        let runs: Vec<HoldoutRun> = variants
            .par_iter()
            .map(|&v| run_variant(&prepared, &model, v, holdout, config))
            .collect::<Result<_>>()?;
        rows.extend(runs.into_iter().map(|r| SweepRow {
            k,
            config: r.variant,
            weighted_mae: r.report.weighted_mae,
            overall_mae: r.report.overall_mae,
            scored_steps: r.report.scored_steps,
            fallback_clusters: r.training.fallback_clusters,
        }));
    }
    let mut baselines = Vec::new();
    for cell in baseline_cells {
        for &v in variants {
            let framework = rows
                .iter()
                .filter(|r| r.config == v)
                .map(|r| r.weighted_mae)
                .min_by(f64::total_cmp);
            baselines.push(baseline_single_cell(train, cell, holdout, v, framework, config)?);
        }
    }
    Ok(SweepResult {
        holdout_cell: holdout.cell_id().to_string(),
        rows,
        baselines,
    })
}

/// Trains a k = 1 model on `train_cell` alone and scores it on `test`.
pub fn baseline_single_cell(
    dataset: &[TimeSeries],
    train_cell: &str,
    test: &TimeSeries,
    variant: FeatureVariant,
    framework_mae: Option<f64>,
    config: &ExperimentConfig,
) -> Result<BaselineResult> {
    let source = dataset
        .iter()
        .chain(std::iter::once(test))
        .find(|s| s.cell_id() == train_cell)
        .ok_or_else(|| Error::UnknownCell(train_cell.to_string()))?;
    let prepared = prepare(std::slice::from_ref(source), config)?;
    let model = cluster(&prepared, 1, config)?;
    let feature_config = feature_config(variant, &prepared, config)?;
    let spec = PredictorSpec {
        window: config.seasonality.n,
        horizon: config.seasonality.m,
        ..PredictorSpec::lstm(feature_config, config.hidden_size, config.seed)
    };
    let training = train_per_cluster(&model, &prepared.segments, &prepared.normalized, &spec, &config.protocol)?;
    let trace = run_stream(&model, &training.models, test, &config.stream)?;
    let mae = evaluate(&trace)?.weighted_mae;
    info!(train_cell, test_cell = test.cell_id(), config = %variant, mae, "single-cell baseline");
    Ok(BaselineResult {
        train_cell: train_cell.to_string(),
        test_cell: test.cell_id().to_string(),
        config: variant,
        mae,
        framework_mae,
        ratio: framework_mae.map(|f| f / mae),
    })
}
