//! News corpus, company registry, TF-IDF keywords and keyword matching.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marketdata::{describe, SeriesStats};
use crate::text::tokenize;

/// Title assigned to articles published without one.
pub const NO_TITLE: &str = "no title";

#[derive(Debug, Error)]
pub enum NewsError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing publication date")]
    MissingDate { line: usize },
    #[error("line {line}: unparseable timestamp {value:?}")]
    BadTimestamp { line: usize, value: String },
    #[error("line {line}: article {id:?} has an empty body")]
    EmptyBody { line: usize, id: String },
    #[error("company {0} has an empty description")]
    EmptyDescription(String),
    #[error("duplicate ticker {0} in registry")]
    DuplicateTicker(String),
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("keyword count must be at least 1")]
    ZeroK,
    #[error("no token counts to summarize")]
    EmptyGroup,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NewsError>;

/// Publisher of an article. Unknown names are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Rbc,
    BcsExpress,
    BcsTechnicalAnalysis,
    Finam,
    SmartLab,
    Rdv,
    Other(String),
}

impl Source {
    pub fn parse(name: &str) -> Source {
        let key: String = name
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "rbc" => Source::Rbc,
            "bcsexpress" | "bcs" => Source::BcsExpress,
            "bcstechnicalanalysis" | "bcsta" => Source::BcsTechnicalAnalysis,
            "finam" => Source::Finam,
            "smartlab" | "smartlabru" => Source::SmartLab,
            "rdv" => Source::Rdv,
            _ => Source::Other(name.trim().to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Source::Rbc => "RBC",
            Source::BcsExpress => "BCS Express",
            Source::BcsTechnicalAnalysis => "BCS Technical Analysis",
            Source::Finam => "Finam",
            Source::SmartLab => "SmartLab",
            Source::Rdv => "RDV",
            Source::Other(s) => s,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Source::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub id: String,
    pub published_at: NaiveDateTime,
    pub source: Source,
    pub title: String,
    pub body: String,
    pub tags: Vec<String>,
}

impl NewsArticle {
    /// Text handed to embedders: title, newline, body.
    pub fn embedding_text(&self) -> String {
        format!("{}\n{}", self.title, self.body)
    }
}

/// Parsed articles in file order plus the ids that were skipped as repeats.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub articles: Vec<NewsArticle>,
    pub skipped_duplicates: Vec<(usize, String)>,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Option<&NewsArticle> {
        self.articles.iter().find(|a| a.id == id)
    }

    pub fn index(&self) -> HashMap<&str, &NewsArticle> {
        self.articles.iter().map(|a| (a.id.as_str(), a)).collect()
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Str(String),
    Num(i64),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTags {
    List(Vec<String>),
    One(String),
}

#[derive(Deserialize)]
struct RawArticle {
    id: RawId,
    #[serde(default)]
    published_at: Option<String>,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    body: Option<String>,
    #[serde(default)]
    tags: Option<RawTags>,
}

/// Accepts `YYYY-MM-DD`, `YYYY-MM-DDTHH:MM[:SS]` (space separator allowed) and
/// RFC 3339 with an offset, whose wall-clock part is kept. Date-only values map
/// to midnight.
pub fn parse_timestamp(value: &str) -> Option<NaiveDateTime> {
    let v = value.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(v) {
        return Some(dt.naive_local());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(v, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(v, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_time(NaiveTime::MIN))
}

/// Reads line-delimited JSON articles. Repeated ids keep the first occurrence.
pub fn parse_news<R: Read>(mut reader: R) -> Result<Corpus> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut seen = HashSet::new();
    let mut corpus = Corpus::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let rec: RawArticle = serde_json::from_str(raw).map_err(|e| NewsError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let id = match rec.id {
            RawId::Str(s) => s,
            RawId::Num(n) => n.to_string(),
        };
        let stamp = rec
            .published_at
            .filter(|s| !s.trim().is_empty())
            .ok_or(NewsError::MissingDate { line })?;
        let published_at =
            parse_timestamp(&stamp).ok_or_else(|| NewsError::BadTimestamp { line, value: stamp.clone() })?;
        let body = rec.body.unwrap_or_default();
        if body.trim().is_empty() {
            return Err(NewsError::EmptyBody { line, id });
        }
        if !seen.insert(id.clone()) {
            warn!("line {line}: duplicate article id {id:?} skipped");
            corpus.skipped_duplicates.push((line, id));
            continue;
        }
        let title = rec
            .title
            .filter(|t| !t.trim().is_empty())
            .unwrap_or_else(|| NO_TITLE.to_string());
        let tags = match rec.tags {
            None => Vec::new(),
            Some(RawTags::List(v)) => v,
            Some(RawTags::One(s)) => s
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect(),
        };
        corpus.articles.push(NewsArticle {
            id,
            published_at,
            source: Source::parse(rec.source.as_deref().unwrap_or("unknown")),
            title,
            body,
            tags,
        });
    }
    Ok(corpus)
}

/// Serializes articles back to the line-delimited format.
pub fn write_news<W: std::io::Write>(articles: &[NewsArticle], mut out: W) -> std::io::Result<()> {
    for a in articles {
        let rec = serde_json::json!({
            "id": a.id,
            "published_at": a.published_at.format("%Y-%m-%dT%H:%M:%S").to_string(),
            "source": a.source.name(),
            "title": a.title,
            "body": a.body,
            "tags": a.tags,
        });
        writeln!(out, "{rec}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanyRecord {
    pub ticker: String,
    pub name: String,
    pub description: String,
}

/// Reads `ticker,name,description` CSV with a header row.
pub fn parse_registry<R: Read>(reader: R) -> Result<Vec<CompanyRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut out: Vec<CompanyRecord> = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.deserialize() {
        let rec: CompanyRecord = rec?;
        if rec.description.trim().is_empty() {
            return Err(NewsError::EmptyDescription(rec.ticker));
        }
        if !seen.insert(rec.ticker.clone()) {
            return Err(NewsError::DuplicateTicker(rec.ticker));
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(NewsError::EmptyRegistry);
    }
    Ok(out)
}

/// Keywords used to select a ticker's news, lowercase and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub ticker: String,
    pub keywords: Vec<String>,
}

impl KeywordSet {
    pub fn new(ticker: impl Into<String>, keywords: impl IntoIterator<Item = String>) -> Self {
        let mut set = KeywordSet { ticker: ticker.into(), keywords: Vec::new() };
        set.extend(keywords);
        set
    }

    /// Appends keywords not already present, keeping first-seen order.
    pub fn extend(&mut self, extra: impl IntoIterator<Item = String>) {
        for kw in extra {
            let kw = kw.trim().to_lowercase();
            if !kw.is_empty() && !self.keywords.contains(&kw) {
                self.keywords.push(kw);
            }
        }
    }
}

/// Reads `ticker,keyword` pairs (optional header) into per-ticker lists.
pub fn parse_keyword_supplement<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 2 {
            return Err(NewsError::Malformed {
                line: idx + 1,
                message: format!("expected ticker,keyword, found {} fields", rec.len()),
            });
        }
        if idx == 0 && rec[0].eq_ignore_ascii_case("ticker") && rec[1].eq_ignore_ascii_case("keyword") {
            continue;
        }
        out.entry(rec[0].to_string()).or_default().push(rec[1].to_string());
    }
    Ok(out)
}

/// Smoothed inverse document frequency: `ln((1 + n_docs) / (1 + df)) + 1`.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Top-`k` TF-IDF tokens of each company description, the corpus being all
/// descriptions. Term frequency is the raw count; ties go to the
/// lexicographically smaller token.
pub fn tfidf_keywords(registry: &[CompanyRecord], k: usize) -> Result<Vec<KeywordSet>> {
    if registry.is_empty() {
        return Err(NewsError::EmptyRegistry);
    }
    if k == 0 {
        return Err(NewsError::ZeroK);
    }
    let mut docs = Vec::with_capacity(registry.len());
    for company in registry {
        let tokens = tokenize(&company.description);
        if tokens.is_empty() {
            return Err(NewsError::EmptyDescription(company.ticker.clone()));
        }
        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        docs.push(tf);
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &docs {
        for token in doc.keys() {
            *df.entry(token.as_str()).or_default() += 1;
        }
    }
    let n = docs.len();
    Ok(registry
        .iter()
        .zip(&docs)
        .map(|(company, tf)| {
            let mut scored: Vec<(&String, f64)> = tf
                .iter()
                .map(|(token, &count)| (token, count as f64 * idf(n, df[token.as_str()])))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            KeywordSet::new(
                company.ticker.clone(),
                scored.into_iter().take(k).map(|(t, _)| t.clone()),
            )
        })
        .collect())
}

/// Which article fields keyword matching looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchFields {
    pub title: bool,
    pub body: bool,
    pub tags: bool,
}

impl Default for MatchFields {
    fn default() -> Self {
        MatchFields { title: true, body: true, tags: true }
    }
}

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    match phrase.len() {
        0 => false,
        1 => tokens.iter().any(|t| *t == phrase[0]),
        n => tokens.windows(n).any(|w| w == phrase),
    }
}

/// Ids of articles containing any keyword as a token (or a contiguous token
/// run for multi-word keywords), ordered by publication time.
pub fn match_articles(corpus: &[NewsArticle], keywords: &KeywordSet, fields: MatchFields) -> Vec<String> {
    let phrases: Vec<Vec<String>> = keywords
        .keywords
        .iter()
        .map(|k| tokenize(k))
        .filter(|p| !p.is_empty())
        .collect();
    let mut hits: Vec<&NewsArticle> = corpus
        .iter()
        .filter(|article| {
            let mut fields_tokens = Vec::with_capacity(3);
            if fields.title {
                fields_tokens.push(tokenize(&article.title));
            }
            if fields.body {
                fields_tokens.push(tokenize(&article.body));
            }
            if fields.tags {
                fields_tokens.push(tokenize(&article.tags.join(" , ")));
            }
            phrases
                .iter()
                .any(|p| fields_tokens.iter().any(|tokens| contains_phrase(tokens, p)))
        })
        .collect();
    hits.sort_by_key(|a| a.published_at);
    hits.into_iter().map(|a| a.id.clone()).collect()
}

/// Per-source descriptive statistics of token counts.
pub fn length_stats<S, I>(counts: I) -> Result<BTreeMap<String, SeriesStats>>
where
    S: Into<String>,
    I: IntoIterator<Item = (S, u64)>,
{
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (source, count) in counts {
        groups.entry(source.into()).or_default().push(count as f64);
    }
    if groups.is_empty() {
        return Err(NewsError::EmptyGroup);
    }
    groups
        .into_iter()
        .map(|(k, v)| describe(&v).map(|s| (k, s)).map_err(|_| NewsError::EmptyGroup))
        .collect()
}

#[derive(Deserialize)]
struct TokenReportRow {
    source: String,
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
    q25: f64,
    q50: f64,
    q75: f64,
}

/// Reads a per-source token-length table (`source,mean,std,min,max,q25,q50,q75`)
/// as written by the embedding exporter.
pub fn read_token_length_report<R: Read>(reader: R) -> Result<BTreeMap<String, SeriesStats>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: TokenReportRow = row?;
        out.insert(
            r.source,
            SeriesStats {
                count: 0,
                mean: r.mean,
                std: r.std,
                min: r.min,
                max: r.max,
                q25: r.q25,
                q50: r.q50,
                q75: r.q75,
            },
        );
    }
    Ok(out)
}
