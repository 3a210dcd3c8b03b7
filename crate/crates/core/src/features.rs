//! News-to-session alignment, feature-row assembly and date splits.
//!
//! A row targeting session `d` holds the returns of the `window` sessions
//! before `d`, laid out field-major (closes, opens, highs, lows), and the
//! close return of `d` as its label. Dual-modality rows also carry the
//! aggregate of the news published in `[open(p), open(d))`, `p` being the
//! previous session.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::embedding::{aggregate_normalized, zero_vector, AggregationMode, EmbeddingStore};
use crate::marketdata::{compute_returns, CandleSeries, MarketDataError, PriceField, ReturnSeries};

pub const DATASET_MAGIC: &[u8; 4] = b"FTR1";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{ticker}: need at least {needed} return observations, have {have}")]
    InsufficientHistory { ticker: String, needed: usize, have: usize },
    #[error("article {0:?} has no embedding")]
    MissingEmbedding(String),
    #[error("window must be at least 1 session")]
    ZeroWindow,
    #[error("return series are misaligned")]
    Misaligned,
    #[error("train end {train_end} must precede test start {test_start}")]
    BadSplit { train_end: NaiveDate, test_start: NaiveDate },
    #[error("empty {0} partition")]
    EmptyPartition(&'static str),
    #[error("bad dataset file: {0}")]
    BadFile(String),
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
    #[error(transparent)]
    Embedding(#[from] crate::embedding::EmbeddingError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[default]
    Single,
    Dual,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Single => "single",
            Modality::Dual => "dual",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Modality::Single),
            "dual" => Ok(Modality::Dual),
            _ => Err(format!("unknown modality {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    /// Exchange-local session open.
    pub market_open: NaiveTime,
    pub window_days: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig { market_open: NaiveTime::from_hms_opt(10, 0, 0).unwrap(), window_days: 5 }
    }
}

/// Assigns each article to the first session whose open is strictly after
/// its timestamp, provided it is not before the open of the session
/// preceding that one. Every session except the first gets an entry (maybe
/// empty). Ids inside a set are ordered by timestamp, then id.
pub fn align_news(
    calendar: &[NaiveDate],
    articles: &[(String, NaiveDateTime)],
    cfg: &AlignmentConfig,
) -> BTreeMap<NaiveDate, Vec<String>> {
    let opens: Vec<NaiveDateTime> = calendar.iter().map(|d| d.and_time(cfg.market_open)).collect();
    let mut map: BTreeMap<NaiveDate, Vec<(NaiveDateTime, String)>> =
        calendar.iter().skip(1).map(|&d| (d, Vec::new())).collect();
    for (id, at) in articles {
        // index of the first open strictly after `at`
        let k = opens.partition_point(|o| o <= at);
        if k == 0 || k >= opens.len() {
            continue;
        }
        map.get_mut(&calendar[k]).unwrap().push((*at, id.clone()));
    }
    map.into_iter()
        .map(|(d, mut v)| {
            v.sort();
            (d, v.into_iter().map(|(_, id)| id).collect())
        })
        .collect()
}

/// Close, open, high and low return series of one ticker on a shared calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceReturns {
    pub ticker: String,
    pub dates: Vec<NaiveDate>,
    /// Indexed in [`PriceField::ALL`] order.
    pub fields: [Vec<f64>; 4],
}

impl PriceReturns {
    pub fn from_series(series: &CandleSeries) -> Result<Self> {
        let all: Vec<ReturnSeries> =
            PriceField::ALL.iter().map(|&f| compute_returns(series, f)).collect::<std::result::Result<_, _>>()?;
        Self::from_return_series(&all)
    }

    pub fn from_return_series(series: &[ReturnSeries]) -> Result<Self> {
        let find = |f: PriceField| series.iter().find(|s| s.field == f).ok_or(FeatureError::Misaligned);
        let close = find(PriceField::Close)?;
        let mut fields: [Vec<f64>; 4] = Default::default();
        for (slot, &f) in fields.iter_mut().zip(PriceField::ALL.iter()) {
            let s = find(f)?;
            if s.dates != close.dates {
                return Err(FeatureError::Misaligned);
            }
            *slot = s.values.clone();
        }
        Ok(PriceReturns { ticker: close.ticker.clone(), dates: close.dates.clone(), fields })
    }

    pub fn close(&self) -> &[f64] {
        &self.fields[0]
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub ticker: String,
    pub target_date: NaiveDate,
    /// `4 * window` returns, field-major.
    pub x_price: Vec<f64>,
    pub x_news: Option<Vec<f64>>,
    pub y: f64,
}

impl FeatureRow {
    pub fn feature_len(&self) -> usize {
        self.x_price.len() + self.x_news.as_ref().map_or(0, Vec::len)
    }

    /// `x_price ‖ x_news`, the flat input of the classical models.
    pub fn flat_features(&self) -> Vec<f64> {
        let mut v = self.x_price.clone();
        if let Some(n) = &self.x_news {
            v.extend_from_slice(n);
        }
        v
    }
}

/// News side of a dual-modality build.
#[derive(Debug, Clone, Copy)]
pub struct NewsInput<'a> {
    pub assignments: &'a BTreeMap<NaiveDate, Vec<String>>,
    pub store: &'a EmbeddingStore,
    pub mode: AggregationMode,
    pub normalize: bool,
}

/// Builds one row per session with a full window of prior returns.
pub fn build_rows(returns: &PriceReturns, news: Option<NewsInput<'_>>, cfg: &AlignmentConfig) -> Result<Vec<FeatureRow>> {
    let window = cfg.window_days;
    if window == 0 {
        return Err(FeatureError::ZeroWindow);
    }
    let n = returns.len();
    if n < window + 1 {
        return Err(FeatureError::InsufficientHistory {
            ticker: returns.ticker.clone(),
            needed: window + 1,
            have: n,
        });
    }
    let mut rows = Vec::with_capacity(n - window);
    for t in window..n {
        let mut x_price = Vec::with_capacity(4 * window);
        for field in &returns.fields {
            x_price.extend_from_slice(&field[t - window..t]);
        }
        let target_date = returns.dates[t];
        let x_news = match &news {
            None => None,
            Some(input) => Some(news_vector(input, target_date)?),
        };
        rows.push(FeatureRow {
            ticker: returns.ticker.clone(),
            target_date,
            x_price,
            x_news,
            y: returns.close()[t],
        });
    }
    Ok(rows)
}

fn news_vector(input: &NewsInput<'_>, date: NaiveDate) -> Result<Vec<f64>> {
    let ids = input.assignments.get(&date).map(Vec::as_slice).unwrap_or_default();
    if ids.is_empty() {
        return Ok(zero_vector(input.store.dim()));
    }
    let mut vectors: Vec<&[f64]> = Vec::new();
    for id in ids {
        let vs = input.store.vectors(id).ok_or_else(|| FeatureError::MissingEmbedding(id.clone()))?;
        vectors.extend(vs);
    }
    Ok(aggregate_normalized(&vectors, input.mode, input.normalize)?)
}

/// Rows dated on or before `train_end` train; rows on or after `test_start`
/// test; anything between is dropped.
pub fn split_by_date(
    rows: &[FeatureRow],
    train_end: NaiveDate,
    test_start: NaiveDate,
) -> Result<(Vec<FeatureRow>, Vec<FeatureRow>)> {
    if train_end >= test_start {
        return Err(FeatureError::BadSplit { train_end, test_start });
    }
    let train: Vec<_> = rows.iter().filter(|r| r.target_date <= train_end).cloned().collect();
    let test: Vec<_> = rows.iter().filter(|r| r.target_date >= test_start).cloned().collect();
    if train.is_empty() {
        return Err(FeatureError::EmptyPartition("train"));
    }
    if test.is_empty() {
        return Err(FeatureError::EmptyPartition("test"));
    }
    Ok((train, test))
}

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!(),
};

/// Writes rows as `FTR1`: magic, `u64` count, then per row the ticker
/// (`u16` length + UTF-8), the date as `i32` days since 1970-01-01, a `u32`
/// price count and that many `f64`, a `u32` news dimension (0 when absent)
/// and that many `f32`, and the `f64` label.
pub fn write_dataset<W: Write>(rows: &[FeatureRow], mut w: W) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    binio::write_u64(&mut w, rows.len() as u64)?;
    for r in rows {
        binio::write_str(&mut w, &r.ticker)?;
        binio::write_i32(&mut w, (r.target_date - EPOCH).num_days() as i32)?;
        binio::write_u32(&mut w, r.x_price.len() as u32)?;
        binio::write_f64s(&mut w, &r.x_price)?;
        match &r.x_news {
            None => binio::write_u32(&mut w, 0)?,
            Some(v) => {
                binio::write_u32(&mut w, v.len() as u32)?;
                for &x in v {
                    binio::write_f32(&mut w, x as f32)?;
                }
            }
        }
        binio::write_f64(&mut w, r.y)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Vec<FeatureRow>> {
    let magic = binio::read_magic(&mut r)?;
    if &magic != DATASET_MAGIC {
        return Err(FeatureError::BadFile(format!("magic {magic:?}")));
    }
    let n = binio::read_u64(&mut r)?;
    let mut rows = Vec::new();
    for _ in 0..n {
        let ticker = binio::read_str(&mut r)?;
        let days = binio::read_i32(&mut r)?;
        let target_date = EPOCH
            .checked_add_signed(chrono::Duration::days(i64::from(days)))
            .ok_or_else(|| FeatureError::BadFile(format!("date offset {days}")))?;
        let n_price = binio::read_u32(&mut r)? as usize;
        let x_price = binio::read_f64s(&mut r, n_price)?;
        let n_news = binio::read_u32(&mut r)? as usize;
        let x_news = if n_news == 0 {
            None
        } else {
            Some((0..n_news).map(|_| binio::read_f32(&mut r).map(f64::from)).collect::<std::io::Result<Vec<_>>>()?)
        };
        let y = binio::read_f64(&mut r)?;
        rows.push(FeatureRow { ticker, target_date, x_price, x_news, y });
    }
    Ok(rows)
}
