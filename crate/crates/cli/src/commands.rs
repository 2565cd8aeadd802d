use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use celladapt::adaptive::{
    evaluate, ood_recluster as recluster, run_stream, EvaluationReport, OodPolicy, StreamOptions,
};
use celladapt::dtw::DtwParams;
use celladapt::evaluation::{
    audit_provenance, baseline_single_cell, feature_config, prepare, BaselineResult, ExperimentConfig,
    Prepared, SweepResult, SweepRow,
};
use celladapt::kmeans::{fit, ClusterModel, KMeansParams};
use celladapt::predictor::{train_per_cluster, PredictorModel, PredictorSpec, TrainingProtocol};
use celladapt::series::{ingest_csv, write_csv, IngestOptions, SeasonalityConfig, TimeSeries};
use celladapt::synth::{self, Profile, RegimeSwitch, SyntheticSpec};

use crate::config::RunConfig;
use crate::store::{to_json, write_file, Store};
use crate::UserError;

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for data.csv, labels.csv and spec.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    cells: u64,
    #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u64).range(1..))]
    weeks: u64,
    /// Number of default profiles to use (1-4); 5 adds an unseen dawn-burst shape.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=5))]
    profiles: u64,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    weekend_scale: f64,
    /// Profile switch as CELL:WEEK:PROFILE; repeatable. Replaces the default switches.
    #[arg(long = "switch")]
    switches: Vec<String>,
    /// Disable the default regime switches.
    #[arg(long)]
    no_switches: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut profiles = SyntheticSpec::default_profiles();
    profiles.push(Profile::unseen_dawn_burst());
    profiles.truncate(args.profiles as usize);
    let cells = args.cells as usize;
    let regime_switches = if !args.switches.is_empty() {
        args.switches
            .iter()
            .map(|s| parse_switch(s))
            .collect::<Result<Vec<_>>>()?
    } else if args.no_switches {
        Vec::new()
    } else {
        SyntheticSpec::default()
            .regime_switches
            .into_iter()
            .filter(|s| s.cell < cells)
            .map(|s| RegimeSwitch {
                profile: s.profile % profiles.len(),
                ..s
            })
            .collect()
    };
    let spec = SyntheticSpec {
        profiles,
        cells,
        weeks: args.weeks as usize,
        noise_sigma: args.sigma,
        regime_switches,
        weekend_scale: args.weekend_scale,
        seed: args.seed,
        ..Default::default()
    };
    let data = synth::generate(&spec)?;
    data.write(&args.out)?;
    write_file(&args.out.join("spec.json"), &to_json(&spec)?)?;
    info!(cells, out = %args.out.display(), separation = spec.separation_ratio(), "synthetic dataset written");
    Ok(())
}

fn parse_switch(s: &str) -> Result<RegimeSwitch> {
    let parts: Vec<&str> = s.split(':').collect();
    let [cell, week, profile] = parts.as_slice() else {
        bail!(UserError(format!("switch `{s}` must be CELL:WEEK:PROFILE")));
    };
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| UserError(format!("switch `{s}`: {e}")));
    Ok(RegimeSwitch {
        cell: num(cell)?,
        week: num(week)?,
        profile: num(profile)?,
    })
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for clean.csv and ingest_report.json.
    #[arg(long)]
    out: PathBuf,
    /// Required channel columns, comma-separated.
    #[arg(long)]
    schema: Option<String>,
    #[arg(long, default_value = "dl_volume")]
    output_channel: String,
    #[arg(long, default_value_t = 2)]
    max_impute_gap: usize,
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let opts = IngestOptions {
        output_channel: args.output_channel.clone(),
        max_impute_gap: args.max_impute_gap,
        impute: true,
    };
    let schema: Option<Vec<String>> = args
        .schema
        .as_ref()
        .map(|s| s.split(',').map(|c| c.trim().to_string()).collect());
    let (series, report) = ingest_csv(&args.data, schema.as_deref(), &opts)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| UserError(format!("cannot create {}: {e}", args.out.display())))?;
    write_csv(args.out.join("clean.csv"), &series)?;
    write_file(&args.out.join("ingest_report.json"), &to_json(&report)?)?;
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<Vec<TimeSeries>> {
    let opts = IngestOptions {
        output_channel: cfg.output_channel.clone(),
        max_impute_gap: cfg.max_impute_gap,
        impute: true,
    };
    let path = cfg.data_path()?;
    let (series, report) = ingest_csv(path, None, &opts).with_context(|| format!("loading {}", path.display()))?;
    info!(cells = report.cells, series = report.series, "data loaded");
    Ok(series)
}

/// Training cells and the held-out cell, if one is configured.
fn split(cfg: &RunConfig, data: Vec<TimeSeries>) -> Result<(Vec<TimeSeries>, Option<Vec<TimeSeries>>)> {
    match &cfg.holdout {
        None => Ok((data, None)),
        Some(cell) => {
            let (held, train): (Vec<_>, Vec<_>) = data.into_iter().partition(|s| s.cell_id() == cell);
            if held.is_empty() {
                return Err(celladapt::Error::UnknownCell(cell.clone()).into());
            }
            Ok((train, Some(held)))
        }
    }
}

fn experiment(cfg: &RunConfig) -> ExperimentConfig {
    let dtw = DtwParams {
        q: cfg.dtw_q,
        band: cfg.dtw_band,
    };
    ExperimentConfig {
        seasonality: SeasonalityConfig { n: cfg.n, m: cfg.m },
        kmeans: KMeansParams {
            max_iter: cfg.kmeans_max_iter,
            n_init: cfg.kmeans_n_init,
            dtw,
            seed: cfg.seed,
            ..Default::default()
        },
        hidden_size: cfg.hidden,
        protocol: TrainingProtocol {
            epochs: cfg.epochs,
            lr0: cfg.lr,
            momentum: cfg.momentum,
            batch_size: cfg.batch_size,
            validation_fraction: cfg.validation_fraction,
            plateau_patience: cfg.plateau_patience,
            early_stop_patience: cfg.early_stop_patience,
            ..Default::default()
        },
        stream: StreamOptions {
            cadence: cfg.cadence,
            assign_mode: cfg.assign_mode,
            phase_aligned: cfg.phase_aligned,
            ..Default::default()
        },
        correlation_threshold: cfg.correlation_threshold,
        handover: cfg.handover(),
        align_midnight: true,
        seed: cfg.seed,
    }
}

fn prepared(cfg: &RunConfig) -> Result<(Prepared, Option<Vec<TimeSeries>>, ExperimentConfig)> {
    let exp = experiment(cfg);
    SeasonalityConfig::new(cfg.n, cfg.m)?;
    let (train, held) = split(cfg, load_data(cfg)?)?;
    let prep = prepare(&train, &exp)?;
    Ok((prep, held, exp))
}

const CLUSTER_HINT: &str = "run `celladapt cluster` with the same run id first";
const TRAIN_HINT: &str = "run `celladapt train` with the same run id and configuration first";

pub fn cluster(cfg: &RunConfig) -> Result<()> {
    let (prep, _, exp) = prepared(cfg)?;
    let mut store = Store::open(&cfg.store, &cfg.run_id)?;
    let cells: std::collections::BTreeSet<&str> =
        prep.segments.segments().iter().map(|s| s.source_cell.as_str()).collect();
    store.note("training_cells", &cells)?;
    store.note("holdout", &cfg.holdout)?;
    for &k in &cfg.k {
        let model = fit(&prep.segments, k, &exp.kmeans)?;
        store.note(
            format!("cluster_k{k}"),
            serde_json::json!({
                "sizes": model.sizes,
                "inertia": model.inertia,
                "converged": model.converged,
                "iterations_run": model.iterations_run,
            }),
        )?;
        store.put(&Store::cluster_file(k), &model)?;
    }
    store.put("norm_stats.json", &prep.stats)?;
    store.save()
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let (prep, _, exp) = prepared(cfg)?;
    let mut store = Store::open(&cfg.store, &cfg.run_id)?;
    for &k in &cfg.k {
        let model: ClusterModel = store.get(&Store::cluster_file(k), CLUSTER_HINT)?;
        for &variant in &cfg.variants {
            let fc = feature_config(variant, &prep, &exp)?;
            let spec = PredictorSpec {
                window: cfg.n,
                horizon: cfg.m,
                ..PredictorSpec::lstm(fc, cfg.hidden, cfg.seed)
            };
            let training = train_per_cluster(&model, &prep.segments, &prep.normalized, &spec, &exp.protocol)?;
            if let Some(cell) = &cfg.holdout {
                audit_provenance(cell, &prep.segments, &training)?;
            }
            for (c, m) in &training.models {
                store.put(&Store::predictor_file(variant.as_str(), k, *c), m)?;
            }
            store.note(
                format!("train_{variant}_k{k}"),
                serde_json::json!({
                    "window_counts": training.window_counts,
                    "fallback_clusters": training.fallback_clusters,
                    "unattributed_windows": training.unattributed_windows,
                    "training_cells": training.training_cells,
                }),
            )?;
        }
    }
    store.save()
}

fn load_predictors(store: &Store, variant: &str, k: usize) -> Result<BTreeMap<usize, PredictorModel>> {
    (0..k)
        .map(|c| Ok((c, store.get(&Store::predictor_file(variant, k, c), TRAIN_HINT)?)))
        .collect()
}

fn ood_policy(cfg: &RunConfig, model: &ClusterModel, prep: &Prepared) -> Result<Option<OodPolicy>> {
    cfg.ood_quantile
        .map(|q| OodPolicy::from_training(model, &prep.segments, q, cfg.ood_buffer_min))
        .transpose()
        .map_err(Into::into)
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalRecord {
    k: usize,
    config: celladapt::series::FeatureVariant,
    report: Option<EvaluationReport>,
    ood_segments: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalSummary {
    holdout_cell: String,
    runs: Vec<EvalRecord>,
    baselines: Vec<BaselineResult>,
}

fn holdout_stream(held: Option<Vec<TimeSeries>>) -> Result<TimeSeries> {
    let Some(mut held) = held else {
        bail!(UserError("eval needs a held-out cell (--holdout or eval.holdout)".into()));
    };
    if held.len() > 1 {
        warn!(pieces = held.len(), "held-out cell was split by long gaps; streaming the longest piece");
    }
    held.sort_by_key(|s| std::cmp::Reverse(s.len()));
    Ok(held.swap_remove(0))
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let (prep, held, exp) = prepared(cfg)?;
    let stream = holdout_stream(held)?;
    let store = Store::open(&cfg.store, &cfg.run_id)?;
    let out = &cfg.report_dir;
    let mut runs = Vec::new();
    for &k in &cfg.k {
        let model: ClusterModel = store.get(&Store::cluster_file(k), CLUSTER_HINT)?;
        let ood = ood_policy(cfg, &model, &prep)?;
        for &variant in &cfg.variants {
            let models = load_predictors(&store, variant.as_str(), k)?;
            let options = StreamOptions {
                ood: ood.clone(),
                ..exp.stream.clone()
            };
            let trace = run_stream(&model, &models, &stream, &options)?;
            trace.write_csv(out_file(out, &format!("trace_k{k}_{variant}.csv"))?)?;
            let report = match evaluate(&trace) {
                Ok(r) => Some(r),
                Err(celladapt::Error::EmptyInput(_)) => {
                    warn!(k, config = %variant, "no ground truth in the scored range; MAE omitted");
                    None
                }
                Err(e) => return Err(e.into()),
            };
            write_file(&out_file(out, &format!("eval_k{k}_{variant}.json"))?, &to_json(&report)?)?;
            runs.push(EvalRecord {
                k,
                config: variant,
                report,
                ood_segments: trace.ood_buffer.len(),
            });
        }
    }
    let data = load_data(cfg)?;
    let mut baselines = Vec::new();
    for cell in &cfg.baseline_cells {
        for &variant in &cfg.variants {
            let framework = runs
                .iter()
                .filter(|r| r.config == variant)
                .filter_map(|r| r.report.as_ref().map(|rep| rep.weighted_mae))
                .min_by(f64::total_cmp);
            baselines.push(baseline_single_cell(&data, cell, &stream, variant, framework, &exp)?);
        }
    }
    let summary = EvalSummary {
        holdout_cell: stream.cell_id().to_string(),
        runs,
        baselines,
    };
    write_file(&out.join("summary.json"), &to_json(&summary)?)?;
    sweep_of(&summary).write_long_csv(out.join("table.csv"))?;
    Ok(())
}

fn out_file(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| UserError(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.join(name))
}

fn sweep_of(summary: &EvalSummary) -> SweepResult {
    SweepResult {
        holdout_cell: summary.holdout_cell.clone(),
        rows: summary
            .runs
            .iter()
            .filter_map(|r| {
                let rep = r.report.as_ref()?;
                Some(SweepRow {
                    k: r.k,
                    config: r.config,
                    weighted_mae: rep.weighted_mae,
                    overall_mae: rep.overall_mae,
                    scored_steps: rep.scored_steps,
                    fallback_clusters: Vec::new(),
                })
            })
            .collect(),
        baselines: summary.baselines.clone(),
    }
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let path = cfg.report_dir.join("summary.json");
    let bytes = std::fs::read(&path)
        .map_err(|e| UserError(format!("missing {} ({e}); run `celladapt eval` first", path.display())))?;
    let summary: EvalSummary =
        serde_json::from_slice(&bytes).map_err(|e| UserError(format!("corrupt {}: {e}", path.display())))?;
    let sweep = sweep_of(&summary);
    sweep.write_long_csv(cfg.report_dir.join("report.csv"))?;

    let ks: std::collections::BTreeSet<usize> = sweep.rows.iter().map(|r| r.k).collect();
    let mut configs = Vec::new();
    for r in &sweep.rows {
        if !configs.contains(&r.config) {
            configs.push(r.config);
        }
    }
    let mut table = format!("weighted MAE on {}\n{:<10}", summary.holdout_cell, "config");
    for k in &ks {
        table.push_str(&format!("{:>10}", format!("K{k}")));
    }
    table.push('\n');
    for c in configs {
        table.push_str(&format!("{:<10}", c.to_string()));
        for &k in &ks {
            let cell = sweep.row(k, c).map_or("-".to_string(), |r| format!("{:.4}", r.weighted_mae));
            table.push_str(&format!("{cell:>10}"));
        }
        table.push('\n');
    }
    for b in &sweep.baselines {
        table.push_str(&format!(
            "baseline {} trained on {}: {:.4}{}\n",
            b.config,
            b.train_cell,
            b.mae,
            b.ratio.map_or(String::new(), |r| format!(" (framework/baseline {r:.3})"))
        ));
    }
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct ReclusterReport {
    old_k: usize,
    new_k: usize,
    threshold: f64,
    buffered_segments: usize,
    new_cluster: usize,
    barycenter_distance: f64,
    degenerate: bool,
}

pub fn ood_recluster(cfg: &RunConfig) -> Result<()> {
    let (prep, held, exp) = prepared(cfg)?;
    let stream = holdout_stream(held)?;
    let mut store = Store::open(&cfg.store, &cfg.run_id)?;
    let k = cfg.k[0];
    if cfg.k.len() > 1 {
        warn!(k, "ood-recluster uses the first k only");
    }
    let model: ClusterModel = store.get(&Store::cluster_file(k), CLUSTER_HINT)?;
    let policy = OodPolicy::from_training(&model, &prep.segments, cfg.ood_quantile.unwrap_or(0.99), cfg.ood_buffer_min)?;
    // Only assignments matter here, so every cluster gets the seasonal-naive rule.
    let naive: BTreeMap<usize, PredictorModel> = (0..model.k)
        .map(|c| {
            let spec = PredictorSpec {
                window: cfg.n,
                horizon: cfg.m,
                ..PredictorSpec::seasonal_naive(celladapt::series::FeatureConfig::uni(cfg.output_channel.clone()))
            };
            (c, PredictorModel::seasonal_naive(spec, Some(c)))
        })
        .collect();
    let options = StreamOptions {
        ood: Some(policy.clone()),
        ..exp.stream.clone()
    };
    let trace = run_stream(&model, &naive, &stream, &options)?;
    let buffered = trace.ood_segments();
    let result = recluster(&prep.segments, &buffered, &model, &exp.kmeans, &policy)?;
    let new_k = result.model.k;
    store.put(&format!("cluster_k{new_k}_ood.json"), &result.model)?;
    let report = ReclusterReport {
        old_k: k,
        new_k,
        threshold: policy.threshold,
        buffered_segments: buffered.len(),
        new_cluster: result.new_cluster,
        barycenter_distance: result.barycenter_distance,
        degenerate: result.degenerate,
    };
    store.put(&format!("ood_recluster_k{k}.json"), &report)?;
    store.save()
}
