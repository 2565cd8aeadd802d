//! `celladapt` command-line interface.

mod commands;
mod config;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use config::RunConfig;

/// Marks a failure caused by the user's input or environment (exit code 2).
#[derive(Debug)]
pub struct UserError(pub String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

#[derive(Parser)]
#[command(
    name = "celladapt",
    version,
    about = "Cluster, train and adapt cell traffic forecasters",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct Common {
    /// TOML config with flat dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set training.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated k values.
    #[arg(long)]
    k: Option<String>,
    /// Comma-separated feature configurations (uni, ran, peak, handover, all).
    #[arg(long)]
    variants: Option<String>,
    #[arg(long)]
    holdout: Option<String>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| UserError(format!("`--set {s}` needs KEY=VALUE")))?;
            cfg.set(k.trim(), v)?;
        }
        let flags: [(&str, Option<String>); 8] = [
            ("paths.data", self.data.as_ref().map(|p| p.display().to_string())),
            ("paths.store", self.store.as_ref().map(|p| p.display().to_string())),
            ("paths.report", self.report_dir.as_ref().map(|p| p.display().to_string())),
            ("run_id", self.run_id.clone()),
            ("seed", self.seed.map(|s| s.to_string())),
            ("kmeans.k", self.k.clone()),
            ("predictor.variants", self.variants.clone()),
            ("eval.holdout", self.holdout.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(commands::SynthArgs),
    /// Validate and clean a CSV, imputing short gaps.
    Ingest(commands::IngestArgs),
    /// Fit one cluster model per k.
    Cluster(#[command(flatten)] Common),
    /// Train per-cluster predictors for every k and configuration.
    Train(#[command(flatten)] Common),
    /// Stream the held-out cell and score every (k, configuration).
    Eval(#[command(flatten)] Common),
    /// Long-format CSV and a summary table from an eval run.
    Report(#[command(flatten)] Common),
    /// Buffer out-of-distribution segments and refit with k + 1 clusters.
    OodRecluster(#[command(flatten)] Common),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<celladapt::Error>() {
            return if e.is_user_error() { 2 } else { 1 };
        }
    }
    2
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Ingest(a) => commands::ingest(&a),
        Command::Cluster(c) => c.resolve().and_then(|cfg| commands::cluster(&cfg)),
        Command::Train(c) => c.resolve().and_then(|cfg| commands::train(&cfg)),
        Command::Eval(c) => c.resolve().and_then(|cfg| commands::eval(&cfg)),
        Command::Report(c) => c.resolve().and_then(|cfg| commands::report(&cfg)),
        Command::OodRecluster(c) => c.resolve().and_then(|cfg| commands::ood_recluster(&cfg)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
