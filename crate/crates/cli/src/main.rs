//! `fusecast`: candle + news return forecasting pipeline.
//!
//! Settings are resolved as built-in defaults, then `--config FILE`, then
//! command-line flags. Every run writes the resolved settings to
//! `<out>/config.resolved.toml`. Log level comes from `MMF_LOG`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use fusecast_core::{AggregationMode, Modality, ModelKind};

use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "fusecast", version, about = "Next-session return forecasting from candles and news embeddings")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-ticker work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Root seed; per-ticker seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// single or dual.
    #[arg(long, global = true)]
    modality: Option<Modality>,
    /// News aggregation: sum or mean.
    #[arg(long, global = true)]
    agg: Option<AggregationMode>,
    /// lstm, ols, knn, dt, rf or gbt.
    #[arg(long, global = true)]
    model: Option<ModelKind>,
    /// Last session (inclusive) of the training period, YYYY-MM-DD.
    #[arg(long, global = true)]
    train_end: Option<NaiveDate>,
    /// First session of the test period, YYYY-MM-DD.
    #[arg(long, global = true)]
    test_start: Option<NaiveDate>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate candles and news and print summaries.
    Ingest {
        /// Per-source token-length CSV from the embedding exporter.
        #[arg(long)]
        token_lengths: Option<PathBuf>,
    },
    /// Build per-ticker keyword sets from the registry.
    Keywords {
        /// Keywords kept per company.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train or apply the duplicate-news filter.
    Dedup {
        #[command(subcommand)]
        action: DedupAction,
    },
    /// Embed the corpus with the hashed bag-of-words embedder.
    EmbedFallback {
        #[arg(long, default_value_t = 256)]
        dim: usize,
    },
    /// Build feature rows for every ticker and write them as a dataset file.
    Features,
    /// Fit one model on a dataset file.
    Train {
        /// Dataset file (default `<out>/features.ftr`).
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Predict with a saved model.
    Predict {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Per-ticker train/test evaluation.
    Backtest,
    /// Compare backtest reports, sorted by MAPE.
    Report {
        /// report.json files.
        reports: Vec<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum DedupAction {
    /// Train the pair classifier on labeled pairs.
    Train {
        /// CSV of `id_a,id_b,label`.
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Drop duplicates from the corpus.
    Apply {
        /// Classifier file (default `paths.dedup_model`).
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = cli.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.modality {
        cfg.modality = v;
    }
    if let Some(v) = cli.agg {
        cfg.aggregation = v;
    }
    if let Some(v) = cli.model {
        cfg.model = v;
    }
    if let Some(v) = cli.train_end {
        cfg.train_end = Some(v);
    }
    if let Some(v) = cli.test_start {
        cfg.test_start = Some(v);
    }
    if let Some(v) = &cli.out {
        cfg.paths.out = v.clone();
    }
    if let Command::Keywords { k: Some(k) } = cli.command {
        cfg.keywords.k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    std::fs::create_dir_all(&cfg.paths.out)
        .with_context(|| format!("creating output directory {}", cfg.paths.out.display()))?;
    cfg.save_resolved()?;
    match &cli.command {
        Command::Ingest { token_lengths } => commands::ingest(&cfg, token_lengths.as_deref()),
        Command::Keywords { .. } => commands::keywords(&cfg),
        Command::Dedup { action: DedupAction::Train { pairs } } => commands::dedup_train(&cfg, pairs),
        Command::Dedup { action: DedupAction::Apply { classifier } } => commands::dedup_apply(&cfg, classifier.as_deref()),
        Command::EmbedFallback { dim } => commands::embed_fallback(&cfg, *dim),
        Command::Features => commands::features(&cfg),
        Command::Train { features } => commands::train(&cfg, features.as_deref()),
        Command::Predict { model_file, features } => commands::predict(&cfg, model_file, features),
        Command::Backtest => commands::backtest(&cfg),
        Command::Report { reports } => commands::report(&cfg, reports),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MMF_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
