use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{Duration, NaiveDateTime};
use serde::Serialize;

use fusecast_core::backtest::{news_by_ticker, run_backtest, BacktestConfig, TickerInput};
use fusecast_core::dedup::{filter_duplicates, parse_pairs, train_pair_classifier, PairClassifier};
use fusecast_core::embedding::{hash_embed, read_embedding_file, write_embedding_file, HASH_MODEL_ID};
use fusecast_core::eval::{comparison_table, export_loss_curves, BacktestReport};
use fusecast_core::features::{align_news, build_rows, read_dataset, write_dataset, NewsInput, PriceReturns};
use fusecast_core::marketdata::{describe, load_candle_dir, SeriesStats};
use fusecast_core::models::{fit_model, LossCurve, Model};
use fusecast_core::newscorpus::{
    length_stats, parse_keyword_supplement, parse_news, parse_registry, read_token_length_report, tfidf_keywords,
    write_news, Corpus, KeywordSet, NewsArticle,
};
use fusecast_core::text::tokenize;
use fusecast_core::{CandleSeries, EmbeddingStore, FeatureRow, Modality, PriceField};

use crate::config::{required, PipelineConfig};

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_file(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.paths.out.join(name)
}

fn load_candles(cfg: &PipelineConfig) -> Result<Vec<CandleSeries>> {
    let dir = cfg.candles_dir()?;
    let series = load_candle_dir(dir).with_context(|| format!("loading candles from {}", dir.display()))?;
    if series.is_empty() {
        bail!("paths.candles: no .csv files in {}", dir.display());
    }
    Ok(series)
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    parse_news(open(path)?).with_context(|| format!("parsing news {}", path.display()))
}

fn load_store(path: &Path) -> Result<EmbeddingStore> {
    read_embedding_file(open(path)?).with_context(|| format!("reading embeddings {}", path.display()))
}

fn load_keywords(cfg: &PipelineConfig) -> Result<Vec<KeywordSet>> {
    let mut sets: Vec<KeywordSet> = match &cfg.paths.registry {
        Some(p) => {
            let registry = parse_registry(open(p)?).with_context(|| format!("parsing registry {}", p.display()))?;
            tfidf_keywords(&registry, cfg.keywords.k)?
        }
        None => Vec::new(),
    };
    if let Some(p) = &cfg.paths.keyword_supplement {
        let extra = parse_keyword_supplement(open(p)?).with_context(|| format!("parsing {}", p.display()))?;
        for (ticker, words) in extra {
            match sets.iter_mut().find(|s| s.ticker == ticker) {
                Some(set) => set.extend(words),
                None => sets.push(KeywordSet::new(ticker, words)),
            }
        }
    }
    if sets.is_empty() {
        bail!("paths.registry: no keyword sets could be built");
    }
    Ok(sets)
}

fn time_ordered(articles: &[NewsArticle]) -> Vec<(String, NaiveDateTime)> {
    let mut items: Vec<(String, NaiveDateTime)> = articles.iter().map(|a| (a.id.clone(), a.published_at)).collect();
    items.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    items
}

fn dedup_corpus(cfg: &PipelineConfig, corpus: Corpus, store: &EmbeddingStore, clf_path: &Path) -> Result<Corpus> {
    let clf = PairClassifier::read(open(clf_path)?).with_context(|| format!("reading {}", clf_path.display()))?;
    let kept = filter_duplicates(&time_ordered(&corpus.articles), store, &clf, Duration::days(cfg.dedup.window_days))?;
    let kept: std::collections::HashSet<String> = kept.into_iter().collect();
    let before = corpus.articles.len();
    let articles: Vec<NewsArticle> = corpus.articles.into_iter().filter(|a| kept.contains(&a.id)).collect();
    log::info!("duplicate filter kept {} of {before} articles", articles.len());
    Ok(Corpus { articles, skipped_duplicates: corpus.skipped_duplicates })
}

/// Candles plus, for dual modality, matched news and the embedding store.
fn load_inputs(cfg: &PipelineConfig) -> Result<(Vec<TickerInput>, Option<EmbeddingStore>)> {
    cfg.validate_news_inputs()?;
    let series = load_candles(cfg)?;
    if cfg.modality == Modality::Single {
        let inputs = series.into_iter().map(|s| TickerInput { series: s, articles: Vec::new() }).collect();
        return Ok((inputs, None));
    }
    let store = load_store(cfg.paths.embeddings.as_deref().expect("validated"))?;
    let mut corpus = load_corpus(cfg.paths.news.as_deref().expect("validated"))?;
    if let Some(clf) = &cfg.paths.dedup_model {
        corpus = dedup_corpus(cfg, corpus, &store, clf)?;
    }
    let keywords = load_keywords(cfg)?;
    let mut matched = news_by_ticker(&corpus.articles, &keywords, cfg.keywords.fields);
    let inputs = series
        .into_iter()
        .map(|s| {
            let articles = matched.remove(s.ticker()).unwrap_or_default();
            log::info!("{}: {} matched articles", s.ticker(), articles.len());
            TickerInput { series: s, articles }
        })
        .collect();
    Ok((inputs, Some(store)))
}

#[derive(Serialize)]
struct TickerSummary {
    ticker: String,
    sessions: usize,
    first: String,
    last: String,
    close_returns: SeriesStats,
}

#[derive(Serialize)]
struct NewsSummary {
    articles: usize,
    skipped_duplicate_ids: usize,
    tokens_by_source: BTreeMap<String, SeriesStats>,
}

#[derive(Serialize)]
struct IngestSummary {
    tickers: Vec<TickerSummary>,
    news: Option<NewsSummary>,
    token_length_report: Option<BTreeMap<String, SeriesStats>>,
}

pub fn ingest(cfg: &PipelineConfig, token_lengths: Option<&Path>) -> Result<()> {
    let mut tickers = Vec::new();
    for s in load_candles(cfg)? {
        let closes = s.values(PriceField::Close);
        let returns: Vec<f64> = closes.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
        let dates = s.dates();
        tickers.push(TickerSummary {
            ticker: s.ticker().to_string(),
            sessions: s.len(),
            first: dates[0].to_string(),
            last: dates[dates.len() - 1].to_string(),
            close_returns: describe(&returns).with_context(|| format!("{}: fewer than 2 sessions", s.ticker()))?,
        });
    }
    let news = match &cfg.paths.news {
        Some(p) => {
            let corpus = load_corpus(p)?;
            let counts = corpus
                .articles
                .iter()
                .map(|a| (a.source.name().to_string(), tokenize(&a.embedding_text()).len() as u64));
            Some(NewsSummary {
                articles: corpus.len(),
                skipped_duplicate_ids: corpus.skipped_duplicates.len(),
                tokens_by_source: if corpus.is_empty() { BTreeMap::new() } else { length_stats(counts)? },
            })
        }
        None => None,
    };
    let token_length_report = match token_lengths {
        Some(p) => Some(read_token_length_report(open(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };

    println!("{:<10} {:>8} {:>12} {:>12} {:>10} {:>10}", "ticker", "sessions", "first", "last", "mean_ret", "std_ret");
    for t in &tickers {
        println!(
            "{:<10} {:>8} {:>12} {:>12} {:>10.5} {:>10.5}",
            t.ticker, t.sessions, t.first, t.last, t.close_returns.mean, t.close_returns.std
        );
    }
    if let Some(n) = &news {
        println!("news: {} articles, {} repeated ids skipped", n.articles, n.skipped_duplicate_ids);
        for (source, st) in &n.tokens_by_source {
            println!("  {source:<24} n={:<6} mean={:.1} median={:.1}", st.count, st.mean, st.q50);
        }
    }
    write_json(&out_file(cfg, "ingest.json"), &IngestSummary { tickers, news, token_length_report })
}

pub fn keywords(cfg: &PipelineConfig) -> Result<()> {
    let sets = load_keywords(cfg)?;
    for s in &sets {
        println!("{}: {}", s.ticker, s.keywords.join(", "));
    }
    write_json(&out_file(cfg, "keywords.json"), &sets)
}

#[derive(Serialize)]
struct DedupTrainSummary {
    pairs: usize,
    train_accuracy: f64,
    epoch_losses: Vec<f64>,
}

pub fn dedup_train(cfg: &PipelineConfig, pairs_path: &Path) -> Result<()> {
    let store = load_store(required("paths.embeddings", &cfg.paths.embeddings)?)?;
    let pairs = parse_pairs(open(pairs_path)?).with_context(|| format!("parsing {}", pairs_path.display()))?;
    let mut train_cfg = cfg.dedup.train.clone();
    train_cfg.seed = fusecast_core::text::derive_seed(cfg.seed, "dedup");
    let trained = train_pair_classifier(&pairs, &store, &train_cfg)?;
    let path = out_file(cfg, "dedup.ddp");
    let mut w = create(&path)?;
    trained.classifier.write(&mut w)?;
    w.flush()?;
    println!("trained on {} pairs, training accuracy {:.4}", pairs.len(), trained.train_accuracy);
    write_json(
        &out_file(cfg, "dedup_train.json"),
        &DedupTrainSummary { pairs: pairs.len(), train_accuracy: trained.train_accuracy, epoch_losses: trained.epoch_losses },
    )
}

pub fn dedup_apply(cfg: &PipelineConfig, classifier: Option<&Path>) -> Result<()> {
    let news = required("paths.news", &cfg.paths.news)?;
    let store = load_store(required("paths.embeddings", &cfg.paths.embeddings)?)?;
    let clf_path = match classifier {
        Some(p) => p,
        None => required("paths.dedup_model", &cfg.paths.dedup_model)?,
    };
    let corpus = load_corpus(news)?;
    let before = corpus.len();
    let kept = dedup_corpus(cfg, corpus, &store, clf_path)?;
    let mut w = create(&out_file(cfg, "news.dedup.jsonl"))?;
    write_news(&kept.articles, &mut w)?;
    w.flush()?;
    println!("kept {} of {before} articles", kept.len());
    Ok(())
}

pub fn embed_fallback(cfg: &PipelineConfig, dim: usize) -> Result<()> {
    let corpus = load_corpus(required("paths.news", &cfg.paths.news)?)?;
    let mut store = EmbeddingStore::new(HASH_MODEL_ID, dim)?;
    for a in &corpus.articles {
        let mut rec = hash_embed(&a.embedding_text(), dim).with_context(|| format!("embedding article {:?}", a.id))?;
        rec.article_id = a.id.clone();
        store.push(rec)?;
    }
    let path = out_file(cfg, "embeddings.emb");
    let mut w = create(&path)?;
    write_embedding_file(&store, &mut w)?;
    w.flush()?;
    println!("wrote {} vectors of dimension {dim} to {}", store.len(), path.display());
    Ok(())
}

fn ticker_rows(cfg: &PipelineConfig, input: &TickerInput, store: Option<&EmbeddingStore>) -> Result<Vec<FeatureRow>> {
    let returns = PriceReturns::from_series(&input.series)?;
    let assignments;
    let news = match store {
        Some(store) => {
            assignments = align_news(&input.series.dates(), &input.articles, &cfg.align);
            Some(NewsInput { assignments: &assignments, store, mode: cfg.aggregation, normalize: cfg.normalize_embeddings })
        }
        None => None,
    };
    Ok(build_rows(&returns, news, &cfg.align)?)
}

pub fn features(cfg: &PipelineConfig) -> Result<()> {
    let (inputs, store) = load_inputs(cfg)?;
    let mut rows = Vec::new();
    for input in &inputs {
        let r = ticker_rows(cfg, input, store.as_ref()).with_context(|| input.series.ticker().to_string())?;
        rows.extend(r);
    }
    let path = out_file(cfg, "features.ftr");
    let mut w = create(&path)?;
    write_dataset(&rows, &mut w)?;
    w.flush()?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn write_curve(path: &Path, label: &str, curve: &LossCurve) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "epoch,model,split,mse")?;
    for (e, v) in curve.train.iter().enumerate() {
        writeln!(w, "{},{label},train,{v}", e + 1)?;
        if let Some(t) = curve.test.get(e) {
            writeln!(w, "{},{label},test,{t}", e + 1)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn train(cfg: &PipelineConfig, features: Option<&Path>) -> Result<()> {
    let (train_end, test_start) = cfg.split()?;
    let default_path = out_file(cfg, "features.ftr");
    let path = features.unwrap_or(&default_path);
    let rows = read_dataset(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    let train: Vec<FeatureRow> = rows.iter().filter(|r| r.target_date <= train_end).cloned().collect();
    let heldout: Vec<FeatureRow> = rows.iter().filter(|r| r.target_date >= test_start).cloned().collect();
    if train.is_empty() {
        bail!("train_end: no rows dated on or before {train_end}");
    }
    let params = cfg.params.reseeded(cfg.seed);
    let fit = fit_model(cfg.model, &params, &train, &heldout)?;
    let model_path = out_file(cfg, "model.bin");
    let mut w = create(&model_path)?;
    fit.model.write(&mut w)?;
    w.flush()?;
    if let Some(curve) = &fit.curve {
        write_curve(&out_file(cfg, "loss_curves.csv"), cfg.model.display_name(), curve)?;
    }
    println!("trained {} on {} rows; model written to {}", cfg.model.display_name(), train.len(), model_path.display());
    Ok(())
}

pub fn predict(cfg: &PipelineConfig, model_path: &Path, features: &Path) -> Result<()> {
    let model = Model::read(open(model_path)?).with_context(|| format!("reading {}", model_path.display()))?;
    let rows = read_dataset(open(features)?).with_context(|| format!("reading {}", features.display()))?;
    let rows: Vec<FeatureRow> = match cfg.test_start {
        Some(start) => rows.into_iter().filter(|r| r.target_date >= start).collect(),
        None => rows,
    };
    let path = out_file(cfg, "predictions.csv");
    let mut w = create(&path)?;
    writeln!(w, "ticker,date,predicted_return,actual_return")?;
    for r in &rows {
        let p = model.predict_row(r).with_context(|| format!("{} {}", r.ticker, r.target_date))?;
        writeln!(w, "{},{},{p},{}", r.ticker, r.target_date, r.y)?;
    }
    w.flush()?;
    println!("wrote {} predictions to {}", rows.len(), path.display());
    Ok(())
}

pub fn backtest(cfg: &PipelineConfig) -> Result<()> {
    let (train_end, test_start) = cfg.split()?;
    let (inputs, store) = load_inputs(cfg)?;
    let bt = BacktestConfig {
        model: cfg.model,
        params: cfg.params.clone(),
        modality: cfg.modality,
        aggregation: cfg.aggregation,
        normalize_embeddings: cfg.normalize_embeddings,
        align: cfg.align,
        train_end,
        test_start,
        seed: cfg.seed,
        jobs: cfg.jobs,
    };
    let report = run_backtest(&bt, &inputs, store.as_ref())?;
    if report.tickers.is_empty() {
        let reasons: Vec<String> = report.failures.iter().map(|f| format!("{}: {}", f.ticker, f.error)).collect();
        bail!("every ticker failed:\n{}", reasons.join("\n"));
    }
    std::fs::write(out_file(cfg, "report.json"), report.to_json())?;
    let text = report.to_text();
    std::fs::write(out_file(cfg, "report.txt"), &text)?;
    let mut w = create(&out_file(cfg, "loss_curves.csv"))?;
    export_loss_curves(&report, &mut w)?;
    w.flush()?;
    print!("{text}");
    Ok(())
}

pub fn report(cfg: &PipelineConfig, paths: &[PathBuf]) -> Result<()> {
    if paths.is_empty() {
        bail!("report: pass at least one report.json");
    }
    let mut reports = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        reports.push(BacktestReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))?);
    }
    let table = comparison_table(&reports);
    std::fs::write(out_file(cfg, "comparison.txt"), &table)?;
    print!("{table}");
    Ok(())
}
