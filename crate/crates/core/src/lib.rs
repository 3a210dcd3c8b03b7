//! Next-session return forecasting from daily candles, optionally fused with
//! aggregated news embeddings.
//!
//! The pipeline runs [`marketdata`] → [`newscorpus`] → [`embedding`] →
//! [`dedup`] → [`features`] → [`models`] → [`eval`], with [`backtest`]
//! driving the whole chain per ticker.

pub mod backtest;
pub mod binio;
pub mod dedup;
pub mod embedding;
pub mod eval;
pub mod features;
pub mod marketdata;
pub mod models;
pub mod newscorpus;
pub mod optim;
pub mod synthetic;
pub mod text;

pub use backtest::{run_backtest, BacktestConfig, BacktestError, TickerInput};
pub use embedding::{AggregationMode, EmbeddingRecord, EmbeddingStore};
pub use eval::{BacktestReport, MetricSet};
pub use features::{AlignmentConfig, FeatureRow, Modality};
pub use marketdata::{Candle, CandleSeries, PriceField};
pub use models::{Model, ModelKind, ModelParams};
pub use newscorpus::{Corpus, KeywordSet, NewsArticle, Source};
