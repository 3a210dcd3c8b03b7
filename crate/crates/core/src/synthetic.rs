//! Synthetic corpora for tests, benchmarks and demos.
//!
//! Paraphrases here are token-level rewrites (shuffle, shuffle plus 10%
//! dropout, title/body swap). They exercise the duplicate filter and carry
//! no linguistic meaning.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::backtest::TickerInput;
use crate::dedup::{LabeledPair, PairLabel};
use crate::embedding::{EmbeddingError, EmbeddingStore};
use crate::marketdata::{Candle, CandleSeries};
use crate::newscorpus::{NewsArticle, Source};

/// Random lowercase pseudo-words, all distinct.
pub fn vocabulary(size: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let len = rng.gen_range(4..=9);
        let w: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

pub fn random_text<R: Rng>(rng: &mut R, vocab: &[String], len: usize) -> String {
    (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].as_str()).collect::<Vec<_>>().join(" ")
}

pub fn random_article<R: Rng>(rng: &mut R, vocab: &[String], id: &str, published_at: NaiveDateTime) -> NewsArticle {
    let title_len = rng.gen_range(4..=8);
    let body_len = rng.gen_range(20..=40);
    NewsArticle {
        id: id.to_string(),
        published_at,
        source: Source::Other("synthetic".into()),
        title: random_text(rng, vocab, title_len),
        body: random_text(rng, vocab, body_len),
        tags: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Paraphrase {
    /// Title and body tokens shuffled independently.
    Shuffle,
    /// Shuffle, then drop about 10% of body tokens.
    ShuffleDropout,
    /// Title and body exchanged.
    Swap,
}

impl Paraphrase {
    pub const ALL: [Paraphrase; 3] = [Paraphrase::Shuffle, Paraphrase::ShuffleDropout, Paraphrase::Swap];
}

fn shuffled<R: Rng>(rng: &mut R, text: &str, dropout: f64) -> String {
    let mut tokens: Vec<&str> = text.split_whitespace().collect();
    tokens.shuffle(rng);
    if dropout > 0.0 && tokens.len() > 1 {
        let kept: Vec<&str> = tokens.iter().copied().filter(|_| rng.gen::<f64>() >= dropout).collect();
        if !kept.is_empty() {
            tokens = kept;
        }
    }
    tokens.join(" ")
}

pub fn paraphrase<R: Rng>(rng: &mut R, original: &NewsArticle, kind: Paraphrase, id: &str) -> NewsArticle {
    let (title, body) = match kind {
        Paraphrase::Shuffle => (shuffled(rng, &original.title, 0.0), shuffled(rng, &original.body, 0.0)),
        Paraphrase::ShuffleDropout => (shuffled(rng, &original.title, 0.0), shuffled(rng, &original.body, 0.1)),
        Paraphrase::Swap => (original.body.clone(), original.title.clone()),
    };
    NewsArticle { id: id.to_string(), title, body, ..original.clone() }
}

/// Labeled pairs over `n` random originals: each original is paired with
/// one paraphrase of every kind (duplicates) and with three other originals
/// (distinct). Returns every article involved.
pub fn labeled_pairs(n: usize, vocab: &[String], seed: u64) -> (Vec<NewsArticle>, Vec<LabeledPair>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let at = NaiveDate::from_ymd_opt(2023, 1, 2).unwrap().and_hms_opt(12, 0, 0).unwrap();
    let originals: Vec<NewsArticle> =
        (0..n).map(|i| random_article(&mut rng, vocab, &format!("o{i}"), at)).collect();
    let mut articles = originals.clone();
    let mut pairs = Vec::new();
    for (i, o) in originals.iter().enumerate() {
        for (k, kind) in Paraphrase::ALL.into_iter().enumerate() {
            let p = paraphrase(&mut rng, o, kind, &format!("o{i}p{k}"));
            pairs.push(LabeledPair::new(&o.id, &p.id, PairLabel::Duplicate).unwrap());
            articles.push(p);
        }
        if n > 1 {
            for _ in 0..3 {
                let mut j = rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                pairs.push(LabeledPair::new(&o.id, &originals[j].id, PairLabel::Distinct).unwrap());
            }
        }
    }
    (articles, pairs)
}

/// `n` originals plus one paraphrase of each, spread over consecutive days
/// and published in time order with every paraphrase a few hours after its
/// original. Returns the articles in time order.
pub fn planted_duplicates(n: usize, vocab: &[String], seed: u64) -> Vec<NewsArticle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2023, 3, 1).unwrap().and_hms_opt(9, 0, 0).unwrap();
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let at = start + Duration::hours(6 * i as i64);
        let o = random_article(&mut rng, vocab, &format!("orig{i:03}"), at);
        let kind = Paraphrase::ALL[i % 3];
        let mut p = paraphrase(&mut rng, &o, kind, &format!("para{i:03}"));
        p.published_at = at + Duration::hours(2);
        out.push(o);
        out.push(p);
    }
    out.sort_by(|a, b| a.published_at.cmp(&b.published_at).then_with(|| a.id.cmp(&b.id)));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSignalConfig {
    pub tickers: usize,
    pub sessions: usize,
    pub start: NaiveDate,
    /// AR(1) coefficient of the autoregressive component.
    pub phi: f64,
    /// Scale of the news-borne component.
    pub signal_scale: f64,
    pub noise_scale: f64,
    /// Number of distinct signal levels, symmetric around zero.
    pub levels: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for PlantedSignalConfig {
    fn default() -> Self {
        PlantedSignalConfig {
            tickers: 2,
            sessions: 600,
            start: NaiveDate::from_ymd_opt(2022, 7, 7).unwrap(),
            phi: 0.6,
            signal_scale: 0.02,
            noise_scale: 0.001,
            levels: 5,
            embedding_dim: 64,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedSignal {
    pub tickers: Vec<TickerInput>,
    pub articles: Vec<NewsArticle>,
    pub store: EmbeddingStore,
    pub calendar: Vec<NaiveDate>,
}

/// The first `n` weekdays from `start`.
pub fn weekday_calendar(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

/// Daily close returns `r(d) = 0.5·ar(d) + 0.5·signal(d) + noise`, where
/// `ar` follows `ar(d) = phi·r(d-1)` and `signal(d)` is one of `levels`
/// discrete values. One article per session and ticker carries the level as
/// a marker token; it is published either after the open of the previous
/// session or before the open of the session itself.
pub fn planted_signal(cfg: &PlantedSignalConfig) -> Result<PlantedSignal, EmbeddingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let calendar = weekday_calendar(cfg.start, cfg.sessions);
    let filler = vocabulary(200, cfg.seed ^ 0x5eed);
    let markers: Vec<String> = (0..cfg.levels).map(|k| format!("marker{}", (b'a' + k as u8) as char)).collect();
    let half = (cfg.levels.max(2) - 1) as f64 / 2.0;
    let open = NaiveTime::from_hms_opt(10, 0, 0).unwrap();

    let mut tickers = Vec::new();
    let mut articles = Vec::new();
    for t in 0..cfg.tickers {
        let name = format!("SYN{t}");
        let mut close = 100.0;
        let mut prev_r = 0.0;
        let mut bars = Vec::with_capacity(calendar.len());
        let mut ticker_articles = Vec::new();
        for (i, &d) in calendar.iter().enumerate() {
            if i == 0 {
                bars.push(Candle::new(d, close, close * 1.005, close * 0.995, close).expect("valid candle"));
                continue;
            }
            let level = rng.gen_range(0..cfg.levels);
            let signal = cfg.signal_scale * (level as f64 - half) / half.max(1.0);
            let r = 0.5 * cfg.phi * prev_r + 0.5 * signal + cfg.noise_scale * rng.sample::<f64, _>(StandardNormal);
            let prev_close = close;
            close *= 1.0 + r;
            prev_r = r;
            let o = prev_close * (1.0 + 0.2 * r);
            let hi = o.max(close) * (1.0 + 0.002 + 0.003 * rng.gen::<f64>());
            let lo = o.min(close) * (1.0 - 0.002 - 0.003 * rng.gen::<f64>());
            bars.push(Candle::new(d, o, hi, lo, close).expect("valid candle"));

            let published_at = if rng.gen_bool(0.5) {
                calendar[i - 1].and_time(open) + Duration::minutes(rng.gen_range(1..600))
            } else {
                d.and_time(open) - Duration::minutes(rng.gen_range(1..480))
            };
            let marker = &markers[level];
            let id = format!("{name}-{i:04}");
            articles.push(NewsArticle {
                id: id.clone(),
                published_at,
                source: Source::Other("synthetic".into()),
                title: format!("{name} {marker}"),
                body: format!("{marker} {marker} {}", random_text(&mut rng, &filler, 3)),
                tags: Vec::new(),
            });
            ticker_articles.push((id, published_at));
        }
        ticker_articles.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        tickers.push(TickerInput {
            series: CandleSeries::new(name, bars).expect("valid series"),
            articles: ticker_articles,
        });
    }
    let store = EmbeddingStore::from_articles_hashed(&articles, cfg.embedding_dim)?;
    Ok(PlantedSignal { tickers, articles, store, calendar })
}
