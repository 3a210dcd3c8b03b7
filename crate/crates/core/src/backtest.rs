//! End-to-end walk over tickers: align news, build rows, split, fit, predict, score.

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{AggregationMode, EmbeddingStore};
use crate::eval::{BacktestReport, ConfigEcho, MetricSet, Prediction, TickerFailure, TickerResult};
use crate::features::{align_news, build_rows, split_by_date, AlignmentConfig, Modality, NewsInput, PriceReturns};
use crate::marketdata::{CandleSeries, PriceField};
use crate::models::{fit_model, ModelKind, ModelParams};
use crate::newscorpus::{match_articles, KeywordSet, MatchFields, NewsArticle};
use crate::text::derive_seed;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("dual modality needs an embedding store")]
    MissingStore,
    #[error("no tickers to evaluate")]
    NoTickers,
    #[error("invalid job count 0")]
    ZeroJobs,
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub model: ModelKind,
    pub params: ModelParams,
    pub modality: Modality,
    pub aggregation: AggregationMode,
    pub normalize_embeddings: bool,
    pub align: AlignmentConfig,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub seed: u64,
    pub jobs: usize,
}

impl BacktestConfig {
    pub fn new(train_end: NaiveDate, test_start: NaiveDate) -> Self {
        BacktestConfig {
            model: ModelKind::Lstm,
            params: ModelParams::default(),
            modality: Modality::Single,
            aggregation: AggregationMode::Mean,
            normalize_embeddings: false,
            align: AlignmentConfig::default(),
            train_end,
            test_start,
            seed: 42,
            jobs: 1,
        }
    }

    /// Row label used in tables and loss-curve files.
    pub fn label(&self, store: Option<&EmbeddingStore>) -> String {
        match (self.modality, store) {
            (Modality::Dual, Some(s)) => {
                format!("{}-{}-{}", self.model.display_name(), s.model_id(), self.aggregation)
            }
            _ => self.model.display_name().to_string(),
        }
    }
}

/// Candles of one ticker plus the ids and timestamps of its matched articles.
#[derive(Debug, Clone)]
pub struct TickerInput {
    pub series: CandleSeries,
    pub articles: Vec<(String, NaiveDateTime)>,
}

/// Matches every keyword set against the corpus, returning `(id, time)`
/// lists keyed by ticker.
pub fn news_by_ticker(
    corpus: &[NewsArticle],
    keywords: &[KeywordSet],
    fields: MatchFields,
) -> BTreeMap<String, Vec<(String, NaiveDateTime)>> {
    let times: BTreeMap<&str, NaiveDateTime> = corpus.iter().map(|a| (a.id.as_str(), a.published_at)).collect();
    keywords
        .iter()
        .map(|k| {
            let ids = match_articles(corpus, k, fields);
            (k.ticker.clone(), ids.into_iter().map(|id| (id.clone(), times[id.as_str()])).collect())
        })
        .collect()
}

fn run_ticker(
    cfg: &BacktestConfig,
    input: &TickerInput,
    store: Option<&EmbeddingStore>,
    seed: u64,
) -> Result<TickerResult, String> {
    let ticker = input.series.ticker().to_string();
    let returns = PriceReturns::from_series(&input.series).map_err(|e| e.to_string())?;
    let calendar = input.series.dates();
    let assignments;
    let news = match (cfg.modality, store) {
        (Modality::Single, _) => None,
        (Modality::Dual, None) => return Err(BacktestError::MissingStore.to_string()),
        (Modality::Dual, Some(store)) => {
            assignments = align_news(&calendar, &input.articles, &cfg.align);
            Some(NewsInput { assignments: &assignments, store, mode: cfg.aggregation, normalize: cfg.normalize_embeddings })
        }
    };
    let rows = build_rows(&returns, news, &cfg.align).map_err(|e| e.to_string())?;
    let (train, test) = split_by_date(&rows, cfg.train_end, cfg.test_start).map_err(|e| e.to_string())?;
    let params = cfg.params.reseeded(seed);
    let fit = fit_model(cfg.model, &params, &train, &test).map_err(|e| e.to_string())?;

    let closes = input.series.values(PriceField::Close);
    let index: BTreeMap<NaiveDate, usize> = calendar.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut pred = Vec::with_capacity(test.len());
    let mut actual = Vec::with_capacity(test.len());
    let mut prev = Vec::with_capacity(test.len());
    for row in &test {
        let i = index[&row.target_date];
        pred.push(fit.model.predict_row(row).map_err(|e| e.to_string())?);
        actual.push(row.y);
        prev.push(closes[i - 1]);
    }
    let metrics = MetricSet::compute(&pred, &actual, &prev).map_err(|e| e.to_string())?;
    let predictions = test
        .iter()
        .enumerate()
        .map(|(k, row)| Prediction {
            date: row.target_date,
            predicted_return: pred[k],
            actual_return: actual[k],
            predicted_price: (pred[k] + 1.0) * prev[k],
            actual_price: closes[index[&row.target_date]],
        })
        .collect();
    Ok(TickerResult { ticker, n_train: train.len(), n_test: test.len(), metrics, curve: fit.curve, predictions })
}

/// Runs the configured model on every ticker. Tickers are processed on up to
/// `jobs` threads; the report lists them in input order and is identical for
/// any job count. A ticker that fails is recorded and the rest continue.
pub fn run_backtest(
    cfg: &BacktestConfig,
    tickers: &[TickerInput],
    store: Option<&EmbeddingStore>,
) -> Result<BacktestReport, BacktestError> {
    if tickers.is_empty() {
        return Err(BacktestError::NoTickers);
    }
    if cfg.jobs == 0 {
        return Err(BacktestError::ZeroJobs);
    }
    if cfg.modality == Modality::Dual && store.is_none() {
        return Err(BacktestError::MissingStore);
    }
    let seeds: Vec<u64> = tickers.iter().map(|t| derive_seed(cfg.seed, t.series.ticker())).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| BacktestError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<TickerResult, String>> = pool.install(|| {
        tickers.par_iter().zip(seeds.par_iter()).map(|(t, &s)| run_ticker(cfg, t, store, s)).collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (t, outcome) in tickers.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(error) => {
                log::warn!("{}: {error}", t.series.ticker());
                failures.push(TickerFailure { ticker: t.series.ticker().to_string(), error });
            }
        }
    }
    let metrics: Vec<MetricSet> = results.iter().map(|r| r.metrics).collect();
    let dual = cfg.modality == Modality::Dual;
    let config = ConfigEcho {
        model: cfg.model,
        modality: cfg.modality,
        aggregation: cfg.aggregation,
        normalize_embeddings: cfg.normalize_embeddings,
        embedder_model_id: store.filter(|_| dual).map(|s| s.model_id().to_string()),
        embedding_dim: store.filter(|_| dual).map(EmbeddingStore::dim),
        train_end: cfg.train_end,
        test_start: cfg.test_start,
        market_open: cfg.align.market_open,
        window_days: cfg.align.window_days,
        seed: cfg.seed,
        ticker_seeds: tickers.iter().zip(&seeds).map(|(t, s)| (t.series.ticker().to_string(), *s)).collect(),
        params: cfg.params.clone(),
    };
    Ok(BacktestReport {
        label: cfg.label(store.filter(|_| dual)),
        config,
        average: MetricSet::average(&metrics),
        tickers: results,
        failures,
    })
}
