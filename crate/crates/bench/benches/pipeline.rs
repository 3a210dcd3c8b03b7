use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fusecast_core::embedding::{aggregate, hash_embed};
use fusecast_core::features::{align_news, build_rows, NewsInput, PriceReturns};
use fusecast_core::models::lstm::{train_lstm, TrainConfig};
use fusecast_core::models::{DecisionTree, KnnModel, TreeParams};
use fusecast_core::synthetic::{planted_signal, random_text, vocabulary, PlantedSignalConfig};
use fusecast_core::{AggregationMode, AlignmentConfig, FeatureRow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows(sessions: usize) -> Vec<FeatureRow> {
    let data = planted_signal(&PlantedSignalConfig { tickers: 1, sessions, ..Default::default() }).unwrap();
    let t = &data.tickers[0];
    let cfg = AlignmentConfig::default();
    let assignments = align_news(&data.calendar, &t.articles, &cfg);
    let news = NewsInput { assignments: &assignments, store: &data.store, mode: AggregationMode::Mean, normalize: false };
    build_rows(&PriceReturns::from_series(&t.series).unwrap(), Some(news), &cfg).unwrap()
}

fn embedding(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vocab = vocabulary(2000, 1);
    let text = random_text(&mut rng, &vocab, 400);
    for dim in [768, 896] {
        c.bench_with_input(BenchmarkId::new("hash_embed", dim), &dim, |b, &dim| b.iter(|| hash_embed(black_box(&text), dim)));
    }
    let vs: Vec<Vec<f64>> = (0..32).map(|_| (0..768).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    c.bench_function("aggregate_mean_32x768", |b| b.iter(|| aggregate(black_box(&vs), AggregationMode::Mean)));
}

fn features(c: &mut Criterion) {
    let data = planted_signal(&PlantedSignalConfig { tickers: 1, sessions: 600, ..Default::default() }).unwrap();
    let t = &data.tickers[0];
    let cfg = AlignmentConfig::default();
    let returns = PriceReturns::from_series(&t.series).unwrap();
    c.bench_function("align_and_build_600", |b| {
        b.iter(|| {
            let assignments = align_news(&data.calendar, &t.articles, &cfg);
            let news = NewsInput { assignments: &assignments, store: &data.store, mode: AggregationMode::Mean, normalize: false };
            build_rows(black_box(&returns), Some(news), &cfg).unwrap()
        })
    });
}

fn models(c: &mut Criterion) {
    let train = rows(300);
    let xs: Vec<Vec<f64>> = train.iter().map(FeatureRow::flat_features).collect();
    let ys: Vec<f64> = train.iter().map(|r| r.y).collect();

    let mut group = c.benchmark_group("models");
    group.sample_size(10);
    let cfg = TrainConfig { epochs: 1, ..Default::default() };
    group.bench_function("lstm_epoch_h64", |b| b.iter(|| train_lstm(black_box(&train), &[], &cfg).unwrap()));
    group.bench_function("tree_fit_depth5", |b| {
        b.iter(|| DecisionTree::fit(black_box(&xs), &ys, TreeParams { max_depth: 5, min_leaf: 1 }).unwrap())
    });
    let knn = KnnModel::fit(5, &xs, &ys).unwrap();
    group.bench_function("knn_predict", |b| b.iter(|| knn.predict(black_box(&xs[17])).unwrap()));
    group.finish();
}

criterion_group!(benches, embedding, features, models);
criterion_main!(benches);
