//! Candlestick series, return transforms and descriptive statistics.
//!
//! The trading calendar of a ticker is exactly the set of dates present in
//! its series; nothing is imputed for missing sessions.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unparseable date {value:?}")]
    BadDate { line: usize, value: String },
    #[error("line {line}: non-positive or non-finite price {value}")]
    NonPositivePrice { line: usize, value: f64 },
    #[error("line {line}: OHLC values are inconsistent (low {low}, high {high}, open {open}, close {close})")]
    InconsistentBar {
        line: usize,
        open: f64,
        high: f64,
        low: f64,
        close: f64,
    },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("empty series")]
    EmptySeries,
    #[error("need at least 2 bars to compute returns, got {0}")]
    TooShort(usize),
    #[error("anchor price must be positive, got {0}")]
    BadAnchor(f64),
    #[error("cannot describe an empty sequence")]
    EmptyInput,
    #[error("unknown price field {0:?}")]
    UnknownField(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MarketDataError>;

/// One trading session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candle {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl Candle {
    pub fn new(date: NaiveDate, open: f64, high: f64, low: f64, close: f64) -> Result<Self> {
        Self::checked(0, date, open, high, low, close)
    }

    fn checked(line: usize, date: NaiveDate, open: f64, high: f64, low: f64, close: f64) -> Result<Self> {
        for value in [open, high, low, close] {
            if !(value.is_finite() && value > 0.0) {
                return Err(MarketDataError::NonPositivePrice { line, value });
            }
        }
        if low > open.min(close) || high < open.max(close) {
            return Err(MarketDataError::InconsistentBar { line, open, high, low, close });
        }
        Ok(Candle { date, open, high, low, close })
    }

    pub fn field(&self, field: PriceField) -> f64 {
        match field {
            PriceField::Close => self.close,
            PriceField::Open => self.open,
            PriceField::High => self.high,
            PriceField::Low => self.low,
        }
    }
}

/// Price field of a candle. `ALL` is the order used in feature windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceField {
    Close,
    Open,
    High,
    Low,
}

impl PriceField {
    pub const ALL: [PriceField; 4] = [PriceField::Close, PriceField::Open, PriceField::High, PriceField::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            PriceField::Close => "close",
            PriceField::Open => "open",
            PriceField::High => "high",
            PriceField::Low => "low",
        }
    }
}

impl fmt::Display for PriceField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PriceField {
    type Err = MarketDataError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "close" => Ok(PriceField::Close),
            "open" => Ok(PriceField::Open),
            "high" => Ok(PriceField::High),
            "low" => Ok(PriceField::Low),
            _ => Err(MarketDataError::UnknownField(s.to_string())),
        }
    }
}

/// Ordered, duplicate-free bars of one ticker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandleSeries {
    ticker: String,
    bars: Vec<Candle>,
}

impl CandleSeries {
    /// Sorts `bars` by date and rejects duplicates.
    pub fn new(ticker: impl Into<String>, mut bars: Vec<Candle>) -> Result<Self> {
        if bars.is_empty() {
            return Err(MarketDataError::EmptySeries);
        }
        bars.sort_by_key(|c| c.date);
        if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(MarketDataError::DuplicateDate(w[0].date));
        }
        Ok(CandleSeries { ticker: ticker.into(), bars })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn bars(&self) -> &[Candle] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|c| c.date).collect()
    }

    pub fn values(&self, field: PriceField) -> Vec<f64> {
        self.bars.iter().map(|c| c.field(field)).collect()
    }
}

/// Relative changes of one price field, each attached to the later date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub ticker: String,
    pub field: PriceField,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Input layout accepted by [`parse_candles`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandleFormat {
    /// `date,open,high,low,close` with an optional header line.
    Csv,
    /// One JSON object per line with the same five keys.
    JsonLines,
}

#[derive(Deserialize)]
struct JsonCandle {
    date: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
}

fn parse_date(line: usize, value: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(value.trim(), "%Y-%m-%d").map_err(|_| MarketDataError::BadDate {
        line,
        value: value.to_string(),
    })
}

fn parse_price(line: usize, value: &str) -> Result<f64> {
    value.trim().parse::<f64>().map_err(|_| MarketDataError::Malformed {
        line,
        message: format!("not a number: {value:?}"),
    })
}

/// Parses one ticker's candles. Line numbers in errors are 1-based.
pub fn parse_candles<R: Read>(ticker: &str, mut reader: R, format: CandleFormat) -> Result<CandleSeries> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut bars = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let candle = match format {
            CandleFormat::Csv => {
                if idx == 0 && raw.to_ascii_lowercase().starts_with("date") {
                    continue;
                }
                let cols: Vec<&str> = raw.split(',').collect();
                if cols.len() != 5 {
                    return Err(MarketDataError::Malformed {
                        line,
                        message: format!("expected 5 columns, found {}", cols.len()),
                    });
                }
                let date = parse_date(line, cols[0])?;
                Candle::checked(
                    line,
                    date,
                    parse_price(line, cols[1])?,
                    parse_price(line, cols[2])?,
                    parse_price(line, cols[3])?,
                    parse_price(line, cols[4])?,
                )?
            }
            CandleFormat::JsonLines => {
                let rec: JsonCandle = serde_json::from_str(raw).map_err(|e| MarketDataError::Malformed {
                    line,
                    message: e.to_string(),
                })?;
                let date = parse_date(line, &rec.date)?;
                Candle::checked(line, date, rec.open, rec.high, rec.low, rec.close)?
            }
        };
        bars.push(candle);
    }
    CandleSeries::new(ticker, bars)
}

/// Loads every `<TICKER>.csv` in `dir`, sorted by ticker.
pub fn load_candle_dir(dir: &Path) -> Result<Vec<CandleSeries>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let ticker = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let file = std::fs::File::open(&path)?;
        let series = parse_candles(&ticker, file, CandleFormat::Csv).map_err(|e| match e {
            MarketDataError::Malformed { line, message } => MarketDataError::Malformed {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        out.push(series);
    }
    Ok(out)
}

/// `values[i] = field(d[i+1]) / field(d[i]) - 1`, dated `d[i+1]`.
pub fn compute_returns(series: &CandleSeries, field: PriceField) -> Result<ReturnSeries> {
    let bars = series.bars();
    if bars.len() < 2 {
        return Err(MarketDataError::TooShort(bars.len()));
    }
    let (dates, values) = bars
        .windows(2)
        .map(|w| (w[1].date, w[1].field(field) / w[0].field(field) - 1.0))
        .unzip();
    Ok(ReturnSeries {
        ticker: series.ticker().to_string(),
        field,
        dates,
        values,
    })
}

/// Compounds `returns` forward from `anchor`: `p[i] = (r[i] + 1) * p[i-1]`, `p[-1] = anchor`.
pub fn reconstruct_prices(returns: &[f64], anchor: f64) -> Result<Vec<f64>> {
    if !(anchor.is_finite() && anchor > 0.0) {
        return Err(MarketDataError::BadAnchor(anchor));
    }
    let mut price = anchor;
    Ok(returns
        .iter()
        .map(|r| {
            price *= r + 1.0;
            price
        })
        .collect())
}

/// Mean, sample standard deviation and inclusive linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn describe(values: &[f64]) -> Result<SeriesStats> {
    if values.is_empty() {
        return Err(MarketDataError::EmptyInput);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SeriesStats {
        count: n,
        mean,
        std,
        min: sorted[0],
        max: sorted[n - 1],
        q25: quantile_sorted(&sorted, 0.25),
        q50: quantile_sorted(&sorted, 0.50),
        q75: quantile_sorted(&sorted, 0.75),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn closes(values: &[f64]) -> CandleSeries {
        let start = d("2022-07-07");
        let bars = values
            .iter()
            .enumerate()
            .map(|(i, &c)| Candle::new(start + chrono::Days::new(i as u64), c, c, c, c).unwrap())
            .collect();
        CandleSeries::new("T", bars).unwrap()
    }

    #[test]
    fn parses_single_row() {
        let s = parse_candles("X", "2022-07-07,100,105,99,102".as_bytes(), CandleFormat::Csv).unwrap();
        assert_eq!(
            s.bars()[0],
            Candle { date: d("2022-07-07"), open: 100.0, high: 105.0, low: 99.0, close: 102.0 }
        );
    }

    #[test]
    fn parses_header_and_sorts() {
        let csv = "date,open,high,low,close\n2022-07-08,1,2,1,2\n2022-07-07,1,1,1,1\n";
        let s = parse_candles("X", csv.as_bytes(), CandleFormat::Csv).unwrap();
        assert_eq!(s.dates(), vec![d("2022-07-07"), d("2022-07-08")]);
    }

    #[test]
    fn parses_json_lines() {
        let src = r#"{"date":"2022-07-07","open":100,"high":105,"low":99,"close":102}"#;
        let s = parse_candles("X", src.as_bytes(), CandleFormat::JsonLines).unwrap();
        assert_eq!(s.bars()[0].close, 102.0);
    }

    #[test]
    fn rejects_duplicate_dates() {
        let csv = "2022-07-07,1,1,1,1\n2022-07-07,2,2,2,2\n";
        let err = parse_candles("X", csv.as_bytes(), CandleFormat::Csv).unwrap_err();
        assert!(matches!(err, MarketDataError::DuplicateDate(_)));
    }

    #[test]
    fn rejects_empty_file() {
        let err = parse_candles("X", "".as_bytes(), CandleFormat::Csv).unwrap_err();
        assert!(matches!(err, MarketDataError::EmptySeries));
    }

    #[test]
    fn reports_line_numbers() {
        let csv = "date,open,high,low,close\n2022-07-07,1,1,1,1\n2022-07-08,1,1,1\n";
        match parse_candles("X", csv.as_bytes(), CandleFormat::Csv).unwrap_err() {
            MarketDataError::Malformed { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let csv = "2022-07-07,1,1,1,1\n07/08/2022,1,1,1,1\n";
        assert!(matches!(
            parse_candles("X", csv.as_bytes(), CandleFormat::Csv).unwrap_err(),
            MarketDataError::BadDate { line: 2, .. }
        ));
        let csv = "2022-07-07,1,1,0,1\n";
        assert!(matches!(
            parse_candles("X", csv.as_bytes(), CandleFormat::Csv).unwrap_err(),
            MarketDataError::NonPositivePrice { line: 1, .. }
        ));
    }

    #[test]
    fn returns_basic() {
        let r = compute_returns(&closes(&[100.0, 102.0]), PriceField::Close).unwrap();
        assert!((r.values[0] - 0.02).abs() < 1e-15);
        assert_eq!(r.dates, vec![d("2022-07-08")]);

        let r = compute_returns(&closes(&[50.0, 50.0, 50.0]), PriceField::Close).unwrap();
        assert_eq!(r.values, vec![0.0, 0.0]);
    }

    #[test]
    fn returns_index_move() {
        // IMOEX 2,213.81 -> 2,650.32 is reported as +19.72%.
        let r = compute_returns(&closes(&[2213.81, 2650.32]), PriceField::Close).unwrap();
        assert!((r.values[0] - 0.1972).abs() < 5e-5, "{}", r.values[0]);
    }

    #[test]
    fn returns_need_two_bars() {
        assert!(matches!(
            compute_returns(&closes(&[1.0]), PriceField::Close),
            Err(MarketDataError::TooShort(1))
        ));
    }

    #[test]
    fn reconstruct_basic() {
        assert_eq!(reconstruct_prices(&[0.02], 100.0).unwrap(), vec![102.0]);
        assert_eq!(reconstruct_prices(&[0.0, 0.0, 0.0], 7.0).unwrap(), vec![7.0; 3]);
        assert!(matches!(reconstruct_prices(&[0.1], 0.0), Err(MarketDataError::BadAnchor(_))));
        assert!(matches!(reconstruct_prices(&[0.1], -3.0), Err(MarketDataError::BadAnchor(_))));
    }

    #[test]
    fn describe_symmetric() {
        let s = describe(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.q50, s.min, s.max), (3.0, 3.0, 1.0, 5.0));
        assert_eq!((s.q25, s.q75), (2.0, 4.0));
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn describe_single_and_empty() {
        let s = describe(&[4.2]).unwrap();
        for v in [s.mean, s.min, s.max, s.q25, s.q50, s.q75] {
            assert_eq!(v, 4.2);
        }
        assert_eq!(s.std, 0.0);
        assert!(matches!(describe(&[]), Err(MarketDataError::EmptyInput)));
    }

    #[test]
    fn describe_interpolates_quartiles() {
        // pos = 0.25 * 3 = 0.75 -> 1 + 0.75 * (2 - 1)
        let s = describe(&[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(s.q25, 1.75);
        assert_eq!(s.q50, 2.5);
        assert_eq!(s.q75, 3.25);
    }

    proptest! {
        #[test]
        fn roundtrip_prices(prices in prop::collection::vec(0.01f64..1e5, 2..60)) {
            let series = closes(&prices);
            let r = compute_returns(&series, PriceField::Close).unwrap();
            prop_assert!(r.values.iter().all(|&v| v > -1.0));
            let back = reconstruct_prices(&r.values, prices[0]).unwrap();
            for (a, b) in back.iter().zip(&prices[1..]) {
                prop_assert!(((a - b) / b).abs() <= 1e-9);
            }
        }

        #[test]
        fn quartiles_ordered(values in prop::collection::vec(-1e6f64..1e6, 1..100)) {
            let s = describe(&values).unwrap();
            prop_assert!(s.min <= s.q25 && s.q25 <= s.q50 && s.q50 <= s.q75 && s.q75 <= s.max);
            prop_assert!(s.std >= 0.0);
        }
    }
}
