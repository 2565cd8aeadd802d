//! Run configuration: flat dotted keys from a TOML file, then `--set`
//! overrides and dedicated flags, in that order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use celladapt::adaptive::AssignMode;
use celladapt::series::FeatureVariant;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub store: PathBuf,
    pub report_dir: PathBuf,
    pub run_id: String,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub dtw_q: f64,
    pub dtw_band: Option<usize>,
    pub k: Vec<usize>,
    pub kmeans_max_iter: usize,
    pub kmeans_n_init: usize,
    pub variants: Vec<FeatureVariant>,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub correlation_threshold: f64,
    pub handover_in: Option<String>,
    pub handover_out: Option<String>,
    pub output_channel: String,
    pub max_impute_gap: usize,
    pub cadence: usize,
    pub assign_mode: AssignMode,
    pub phase_aligned: bool,
    pub ood_quantile: Option<f64>,
    pub ood_buffer_min: usize,
    pub holdout: Option<String>,
    pub baseline_cells: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            store: PathBuf::from("store"),
            report_dir: PathBuf::from("reports"),
            run_id: "default".into(),
            seed: 0,
            n: 24,
            m: 1,
            dtw_q: 2.0,
            dtw_band: None,
            k: vec![1, 2, 4, 8],
            kmeans_max_iter: 100,
            kmeans_n_init: 10,
            variants: vec![FeatureVariant::Uni],
            hidden: 48,
            epochs: 90,
            lr: 0.1,
            momentum: 0.9,
            batch_size: 32,
            validation_fraction: 0.15,
            plateau_patience: 10,
            early_stop_patience: 40,
            correlation_threshold: 0.8,
            handover_in: Some("ho_in".into()),
            handover_out: Some("ho_out".into()),
            output_channel: "dl_volume".into(),
            max_impute_gap: 2,
            cadence: 1,
            assign_mode: AssignMode::Trailing,
            phase_aligned: true,
            ood_quantile: None,
            ood_buffer_min: 3,
            holdout: None,
            baseline_cells: Vec::new(),
        }
    }
}

/// Every accepted key, for error messages.
pub const KEYS: &[&str] = &[
    "paths.data",
    "paths.store",
    "paths.report",
    "run_id",
    "seed",
    "seasonality.n",
    "seasonality.m",
    "dtw.q",
    "dtw.band",
    "kmeans.k",
    "kmeans.max_iter",
    "kmeans.n_init",
    "predictor.variants",
    "predictor.hidden",
    "training.epochs",
    "training.lr",
    "training.momentum",
    "training.batch_size",
    "training.validation_fraction",
    "training.plateau_patience",
    "training.early_stop_patience",
    "features.correlation_threshold",
    "features.handover_in",
    "features.handover_out",
    "ingest.output_channel",
    "ingest.max_impute_gap",
    "stream.cadence",
    "stream.assign_mode",
    "stream.phase_aligned",
    "ood.quantile",
    "ood.buffer_min_segments",
    "eval.holdout",
    "eval.baseline_cells",
];

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow!("`{s}`: {e}")))
        .collect()
}

fn parse<T: std::str::FromStr>(v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| anyhow!("`{v}`: {e}"))
}

fn optional(v: &str) -> Option<String> {
    let v = v.trim();
    (!v.is_empty() && v != "none").then(|| v.to_string())
}

impl RunConfig {
    /// Applies one `key = value` setting. List values are comma-separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let ctx = || format!("config key `{key}`");
        match key {
            "paths.data" => self.data = Some(PathBuf::from(value)),
            "paths.store" => self.store = PathBuf::from(value),
            "paths.report" => self.report_dir = PathBuf::from(value),
            "run_id" => self.run_id = value.to_string(),
            "seed" => self.seed = parse(value).with_context(ctx)?,
            "seasonality.n" => self.n = parse(value).with_context(ctx)?,
            "seasonality.m" => self.m = parse(value).with_context(ctx)?,
            "dtw.q" => self.dtw_q = parse(value).with_context(ctx)?,
            "dtw.band" => {
                self.dtw_band = optional(value).map(|v| parse(&v)).transpose().with_context(ctx)?
            }
            "kmeans.k" => self.k = list(value).with_context(ctx)?,
            "kmeans.max_iter" => self.kmeans_max_iter = parse(value).with_context(ctx)?,
            "kmeans.n_init" => self.kmeans_n_init = parse(value).with_context(ctx)?,
            "predictor.variants" => self.variants = list(value).with_context(ctx)?,
            "predictor.hidden" => self.hidden = parse(value).with_context(ctx)?,
            "training.epochs" => self.epochs = parse(value).with_context(ctx)?,
            "training.lr" => self.lr = parse(value).with_context(ctx)?,
            "training.momentum" => self.momentum = parse(value).with_context(ctx)?,
            "training.batch_size" => self.batch_size = parse(value).with_context(ctx)?,
            "training.validation_fraction" => self.validation_fraction = parse(value).with_context(ctx)?,
            "training.plateau_patience" => self.plateau_patience = parse(value).with_context(ctx)?,
            "training.early_stop_patience" => self.early_stop_patience = parse(value).with_context(ctx)?,
            "features.correlation_threshold" => self.correlation_threshold = parse(value).with_context(ctx)?,
            "features.handover_in" => self.handover_in = optional(value),
            "features.handover_out" => self.handover_out = optional(value),
            "ingest.output_channel" => self.output_channel = value.to_string(),
            "ingest.max_impute_gap" => self.max_impute_gap = parse(value).with_context(ctx)?,
            "stream.cadence" => self.cadence = parse(value).with_context(ctx)?,
            "stream.assign_mode" => self.assign_mode = parse(value).with_context(ctx)?,
            "stream.phase_aligned" => self.phase_aligned = parse(value).with_context(ctx)?,
            "ood.quantile" => {
                self.ood_quantile = optional(value).map(|v| parse(&v)).transpose().with_context(ctx)?
            }
            "ood.buffer_min_segments" => self.ood_buffer_min = parse(value).with_context(ctx)?,
            "eval.holdout" => self.holdout = optional(value),
            "eval.baseline_cells" => self.baseline_cells = list(value).with_context(ctx)?,
            other => bail!("unknown config key `{other}`; known keys: {}", KEYS.join(", ")),
        }
        Ok(())
    }

    /// Loads a TOML file and applies its keys, flattened to dotted form.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let mut flat = BTreeMap::new();
        flatten("", &toml::Value::Table(table), &mut flat)?;
        let mut cfg = Self::default();
        for (k, v) in &flat {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() {
            bail!("kmeans.k must list at least one value");
        }
        if self.k.contains(&0) {
            bail!("kmeans.k values must be >= 1");
        }
        if self.variants.is_empty() {
            bail!("predictor.variants must list at least one configuration");
        }
        if self.cadence == 0 {
            bail!("stream.cadence must be >= 1");
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            bail!("run_id must be a non-empty plain name");
        }
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| anyhow!("no data file given (use --data or paths.data)"))
    }

    pub fn handover(&self) -> Option<(String, String)> {
        Some((self.handover_in.clone()?, self.handover_out.clone()?))
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) -> Result<()> {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                flatten(&key(k), v, out)?;
            }
        }
        toml::Value::Array(items) => {
            let parts: Result<Vec<String>> = items.iter().map(scalar).collect();
            out.insert(prefix.to_string(), parts?.join(","));
        }
        other => {
            out.insert(prefix.to_string(), scalar(other)?);
        }
    }
    Ok(())
}

fn scalar(v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        other => bail!("unsupported config value {other}"),
    })
}
