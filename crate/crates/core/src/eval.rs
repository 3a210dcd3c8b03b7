//! Forecast quality metrics and backtest reports.
//!
//! Returns are turned into prices pointwise: the price predicted for session
//! `d` is `(r̂(d) + 1) · close(p)` where `p` is the previous session and its
//! close is the actual one. MAPE and R² are computed on those prices;
//! direction accuracy and MAE on returns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::AggregationMode;
use crate::features::Modality;
use crate::models::{LossCurve, ModelKind, ModelParams};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} actuals")]
    LengthMismatch(usize, usize),
    #[error("no observations")]
    Empty,
    #[error("actual value at position {0} is zero")]
    ZeroActual(usize),
    #[error("actual series is constant; R² is undefined")]
    ConstantActual,
    #[error("need at least 2 observations for R²")]
    TooShort,
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn check(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(EvalError::LengthMismatch(pred.len(), actual.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

fn is_up(v: f64) -> bool {
    v > 0.0
}

/// Share of positions whose sign class agrees; zero counts as "down".
pub fn direction_accuracy(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check(pred, actual)?;
    let hits = pred.iter().zip(actual).filter(|(p, a)| is_up(**p) == is_up(**a)).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check(pred, actual)?;
    if let Some(i) = actual.iter().position(|&a| a == 0.0) {
        return Err(EvalError::ZeroActual(i));
    }
    let s: f64 = pred.iter().zip(actual).map(|(p, a)| ((p - a) / a).abs()).sum();
    Ok(100.0 * s / pred.len() as f64)
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / pred.len() as f64)
}

/// `1 - SS_res / SS_tot`, the total sum of squares taken about the actual mean.
pub fn r2(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check(pred, actual)?;
    if actual.len() < 2 {
        return Err(EvalError::TooShort);
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ConstantActual);
    }
    let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// `(r + 1) · anchor` elementwise, each return against its own anchor price.
pub fn pointwise_prices(returns: &[f64], anchors: &[f64]) -> Vec<f64> {
    returns.iter().zip(anchors).map(|(r, p)| (r + 1.0) * p).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    /// Fraction in [0, 1].
    pub accuracy: f64,
    /// Percent.
    pub mape: f64,
    /// Mean absolute return error.
    pub mae: f64,
    /// Price-level R²; `None` when the actual prices are constant.
    pub r2: Option<f64>,
    pub n: usize,
}

impl MetricSet {
    /// Metrics for predicted vs actual returns, with `prev_close[i]` the
    /// actual close of the session before observation `i`.
    pub fn compute(pred: &[f64], actual: &[f64], prev_close: &[f64]) -> Result<Self> {
        check(pred, actual)?;
        if prev_close.len() != actual.len() {
            return Err(EvalError::LengthMismatch(prev_close.len(), actual.len()));
        }
        let pred_prices = pointwise_prices(pred, prev_close);
        let actual_prices = pointwise_prices(actual, prev_close);
        let r2 = match r2(&pred_prices, &actual_prices) {
            Ok(v) => Some(v),
            Err(EvalError::ConstantActual | EvalError::TooShort) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricSet {
            accuracy: direction_accuracy(pred, actual)?,
            mape: mape(&pred_prices, &actual_prices)?,
            mae: mae(pred, actual)?,
            r2,
            n: pred.len(),
        })
    }

    /// Unweighted mean over tickers. R² is averaged only when every ticker has one.
    pub fn average(sets: &[MetricSet]) -> Option<MetricSet> {
        if sets.is_empty() {
            return None;
        }
        let k = sets.len() as f64;
        let mean = |f: fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / k;
        let r2 = sets
            .iter()
            .map(|s| s.r2)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / k);
        Some(MetricSet {
            accuracy: mean(|s| s.accuracy),
            mape: mean(|s| s.mape),
            mae: mean(|s| s.mae),
            r2,
            n: sets.iter().map(|s| s.n).sum(),
        })
    }
}

/// Everything needed to reproduce a backtest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: ModelKind,
    pub modality: Modality,
    pub aggregation: AggregationMode,
    pub normalize_embeddings: bool,
    pub embedder_model_id: Option<String>,
    pub embedding_dim: Option<usize>,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub market_open: NaiveTime,
    pub window_days: usize,
    pub seed: u64,
    pub ticker_seeds: BTreeMap<String, u64>,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub date: NaiveDate,
    pub predicted_return: f64,
    pub actual_return: f64,
    pub predicted_price: f64,
    pub actual_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerResult {
    pub ticker: String,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: MetricSet,
    pub curve: Option<LossCurve>,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerFailure {
    pub ticker: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    /// Row label, e.g. `LSTM` or `LSTM-hash-bow-fnv1a-v1-Mean`.
    pub label: String,
    pub config: ConfigEcho,
    pub tickers: Vec<TickerResult>,
    pub average: Option<MetricSet>,
    pub failures: Vec<TickerFailure>,
}

impl BacktestReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Aligned plain-text table, values rounded to three decimals.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.label);
        let _ = writeln!(
            out,
            "model={} modality={} aggregation={} train_end={} test_start={} seed={}",
            c.model, c.modality, c.aggregation, c.train_end, c.test_start, c.seed
        );
        if let Some(id) = &c.embedder_model_id {
            let _ = writeln!(out, "embedder={id} dim={}", c.embedding_dim.unwrap_or(0));
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>12} {:>9} {:>10} {:>8}",
            "ticker", "n_train", "n_test", "accuracy,%", "MAPE,%", "MAE", "R2"
        );
        let row = |name: &str, n_train: String, m: &MetricSet| {
            format!(
                "{:<10} {:>8} {:>8} {:>12.3} {:>9.3} {:>10.5} {:>8}",
                name,
                n_train,
                m.n,
                100.0 * m.accuracy,
                m.mape,
                m.mae,
                m.r2.map_or("n/a".to_string(), |v| format!("{v:.3}"))
            )
        };
        for t in &self.tickers {
            let _ = writeln!(out, "{}", row(&t.ticker, t.n_train.to_string(), &t.metrics));
        }
        if let Some(avg) = &self.average {
            let _ = writeln!(out, "{}", row("average", String::new(), avg));
        }
        for f in &self.failures {
            let _ = writeln!(out, "FAILED {}: {}", f.ticker, f.error);
        }
        out
    }
}

/// Averaged metrics of several runs, ascending by MAPE.
pub fn comparison_table(reports: &[BacktestReport]) -> String {
    let mut rows: Vec<(&str, &MetricSet)> =
        reports.iter().filter_map(|r| r.average.as_ref().map(|a| (r.label.as_str(), a))).collect();
    rows.sort_by(|a, b| a.1.mape.total_cmp(&b.1.mape).then_with(|| a.0.cmp(b.0)));
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$} {:>12} {:>9}\n", "model", "accuracy,%", "MAPE,%");
    for (label, m) in rows {
        let _ = writeln!(out, "{:<width$} {:>12.3} {:>9.3}", label, 100.0 * m.accuracy, m.mape);
    }
    out
}

/// Writes `epoch,model,split,mse` rows: per epoch, the MSE averaged over
/// every ticker that has a curve.
pub fn export_loss_curves<W: Write>(report: &BacktestReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,model,split,mse")?;
    let curves: Vec<&LossCurve> = report.tickers.iter().filter_map(|t| t.curve.as_ref()).collect();
    let epochs = curves.iter().map(|c| c.train.len()).min().unwrap_or(0);
    let has_test = curves.iter().all(|c| c.test.len() >= epochs) && !curves.is_empty();
    for e in 0..epochs {
        let train = curves.iter().map(|c| c.train[e]).sum::<f64>() / curves.len() as f64;
        writeln!(out, "{},{},train,{}", e + 1, report.label, train)?;
        if has_test {
            let test = curves.iter().map(|c| c.test[e]).sum::<f64>() / curves.len() as f64;
            writeln!(out, "{},{},test,{}", e + 1, report.label, test)?;
        }
    }
    Ok(())
}
