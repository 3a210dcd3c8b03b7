use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fusecast_core::dedup::write_pairs;
use fusecast_core::newscorpus::write_news;
use fusecast_core::synthetic::{labeled_pairs, planted_signal, vocabulary, PlantedSignalConfig};
use fusecast_core::PriceField;
use tempfile::TempDir;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = planted_signal(&PlantedSignalConfig { sessions: 160, ..Default::default() }).unwrap();
        let candles = dir.path().join("candles");
        fs::create_dir(&candles).unwrap();
        for t in &data.tickers {
            let mut text = String::from("date,open,high,low,close\n");
            for b in t.series.bars() {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    b.date,
                    b.field(PriceField::Open),
                    b.field(PriceField::High),
                    b.field(PriceField::Low),
                    b.field(PriceField::Close)
                ));
            }
            fs::write(candles.join(format!("{}.csv", t.series.ticker())), text).unwrap();
        }
        let mut news = Vec::new();
        write_news(&data.articles, &mut news).unwrap();
        fs::write(dir.path().join("news.jsonl"), news).unwrap();
        fs::write(
            dir.path().join("registry.csv"),
            "ticker,name,description\nSYN0,Synthetic Zero,SYN0 industrial group\nSYN1,Synthetic One,SYN1 industrial group\n",
        )
        .unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, body: &str) -> PathBuf {
        let text = format!(
            "seed = 7\ntrain_end = \"2022-12-30\"\ntest_start = \"2023-01-02\"\n{body}\n[paths]\ncandles = {:?}\nnews = {:?}\nregistry = {:?}\nout = {:?}\n",
            self.path("candles"),
            self.path("news.jsonl"),
            self.path("registry.csv"),
            self.path("out"),
        );
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }
}

fn fusecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusecast")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = fusecast(args);
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn backtest_writes_reports_and_resolved_config() {
    let fx = Fixture::new();
    let cfg = fx.config("run.toml", "model = \"ols\"");
    ok(&["backtest", "--config", s(&cfg)]);
    let out = fx.path("out");
    for f in ["report.json", "report.txt", "loss_curves.csv", "config.resolved.toml"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let r = report(&out);
    assert_eq!(r["label"], "LinReg");
    assert_eq!(r["tickers"].as_array().unwrap().len(), 2);
    assert_eq!(fs::read_to_string(out.join("loss_curves.csv")).unwrap(), "epoch,model,split,mse\n");
}

#[test]
fn rerun_from_resolved_config_is_byte_identical() {
    let fx = Fixture::new();
    let cfg = fx.config("run.toml", "model = \"rf\"\n[params.forest]\nn_trees = 8");
    ok(&["backtest", "--config", s(&cfg), "--jobs", "2"]);
    let out = fx.path("out");
    let first = fs::read(out.join("report.json")).unwrap();
    let resolved = fx.path("resolved.toml");
    fs::copy(out.join("config.resolved.toml"), &resolved).unwrap();
    ok(&["backtest", "--config", s(&resolved)]);
    assert_eq!(first, fs::read(out.join("report.json")).unwrap());
    assert_eq!(fs::read(&resolved).unwrap(), fs::read(out.join("config.resolved.toml")).unwrap());
}

#[test]
fn job_count_does_not_change_the_report() {
    let fx = Fixture::new();
    let cfg = fx.config("run.toml", "model = \"gbt\"\n[params.gbt]\nrounds = 10");
    let a = fx.path("a");
    let b = fx.path("b");
    ok(&["backtest", "--config", s(&cfg), "--jobs", "1", "--out", s(&a)]);
    ok(&["backtest", "--config", s(&cfg), "--jobs", "4", "--out", s(&b)]);
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
}

#[test]
fn flags_override_config_values() {
    let fx = Fixture::new();
    let cfg = fx.config("run.toml", "model = \"ols\"");
    ok(&["backtest", "--config", s(&cfg), "--model", "knn", "--seed", "99"]);
    let r = report(&fx.path("out"));
    assert_eq!(r["config"]["model"], "knn");
    assert_eq!(r["config"]["seed"], 99);
    let resolved = fs::read_to_string(fx.path("out").join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("model = \"knn\""), "{resolved}");
}

#[test]
fn dual_without_embeddings_names_the_field() {
    let fx = Fixture::new();
    let cfg = fx.config("run.toml", "model = \"ols\"\nmodality = \"dual\"");
    let out = fusecast(&["backtest", "--config", s(&cfg)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("paths.embeddings"), "{err}");
}

#[test]
fn dual_backtest_with_fallback_embeddings() {
    let fx = Fixture::new();
    let cfg = fx.config("run.toml", "model = \"ols\"");
    ok(&["embed-fallback", "--config", s(&cfg), "--dim", "32"]);
    let emb = fx.path("out").join("embeddings.emb");
    assert!(emb.is_file());
    let dual = fx.config("dual.toml", "model = \"ols\"\nmodality = \"dual\"");
    let text = fs::read_to_string(&dual).unwrap().replace("[paths]\n", &format!("[paths]\nembeddings = {emb:?}\n"));
    fs::write(&dual, text).unwrap();
    let out_dir = fx.path("dual_out");
    ok(&["backtest", "--config", s(&dual), "--out", s(&out_dir)]);
    let r = report(&out_dir);
    assert_eq!(r["label"], "LinReg-hash-bow-fnv1a-v1-mean");
    assert_eq!(r["config"]["embedding_dim"], 32);
}

#[test]
fn keywords_emits_one_set_per_registry_row() {
    let fx = Fixture::new();
    let cfg = fx.config("run.toml", "");
    ok(&["keywords", "--config", s(&cfg), "--k", "30"]);
    let sets: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fx.path("out").join("keywords.json")).unwrap()).unwrap();
    let sets = sets.as_array().unwrap();
    assert_eq!(sets.len(), 2);
    assert_eq!(sets[0]["ticker"], "SYN0");
    assert_eq!(sets[0]["keywords"][0], "syn0");
}

#[test]
fn features_train_predict_chain() {
    let fx = Fixture::new();
    let cfg = fx.config("run.toml", "model = \"lstm\"\n[params.lstm]\nepochs = 3\nhidden = 8");
    ok(&["features", "--config", s(&cfg)]);
    let out = fx.path("out");
    ok(&["train", "--config", s(&cfg)]);
    let curves = fs::read_to_string(out.join("loss_curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 3 * 2);
    ok(&[
        "predict",
        "--config",
        s(&cfg),
        "--model-file",
        s(&out.join("model.bin")),
        "--features",
        s(&out.join("features.ftr")),
    ]);
    let preds = fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("ticker,date,predicted_return,actual_return\n"));
    assert!(preds.lines().skip(1).all(|l| l.split(',').nth(1).unwrap() >= "2023-01-02"));
    assert!(preds.lines().count() > 10);
}

#[test]
fn dedup_train_then_apply() {
    let fx = Fixture::new();
    let vocab = vocabulary(200, 5);
    let (articles, pairs) = labeled_pairs(40, &vocab, 6);
    let mut news = Vec::new();
    write_news(&articles, &mut news).unwrap();
    fs::write(fx.path("pairs_news.jsonl"), news).unwrap();
    let mut csv = Vec::new();
    write_pairs(&pairs, &mut csv).unwrap();
    fs::write(fx.path("pairs.csv"), csv).unwrap();

    let cfg = fx.config("run.toml", "[dedup.train]\nepochs = 5\nhidden = [16]");
    let text = fs::read_to_string(&cfg).unwrap().replace("news.jsonl", "pairs_news.jsonl");
    fs::write(&cfg, text).unwrap();
    ok(&["embed-fallback", "--config", s(&cfg), "--dim", "16"]);
    let emb = fx.path("out").join("embeddings.emb");
    let text = fs::read_to_string(&cfg).unwrap().replace("[paths]\n", &format!("[paths]\nembeddings = {emb:?}\n"));
    fs::write(&cfg, text).unwrap();
    ok(&["dedup", "train", "--config", s(&cfg), "--pairs", s(&fx.path("pairs.csv"))]);
    let clf = fx.path("out").join("dedup.ddp");
    assert!(clf.is_file());
    let out = ok(&["dedup", "apply", "--config", s(&cfg), "--classifier", s(&clf)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("of 160 articles"));
    assert!(fx.path("out").join("news.dedup.jsonl").is_file());
}

#[test]
fn report_sorts_runs_by_mape() {
    let fx = Fixture::new();
    let cfg = fx.config("run.toml", "");
    let a = fx.path("a");
    let b = fx.path("b");
    ok(&["backtest", "--config", s(&cfg), "--model", "ols", "--out", s(&a)]);
    ok(&["backtest", "--config", s(&cfg), "--model", "knn", "--out", s(&b)]);
    let out = ok(&["report", s(&a.join("report.json")), s(&b.join("report.json")), "--out", s(&fx.path("cmp"))]);
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    let mape = |l: &str| l.split_whitespace().last().unwrap().parse::<f64>().unwrap();
    assert!(mape(rows[0]) <= mape(rows[1]));
    assert_eq!(fs::read_to_string(fx.path("cmp").join("comparison.txt")).unwrap(), table);
}

#[test]
fn ingest_summarizes_inputs() {
    let fx = Fixture::new();
    let cfg = fx.config("run.toml", "");
    let out = ok(&["ingest", "--config", s(&cfg)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("SYN0") && stdout.contains("318 articles"), "{stdout}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fx.path("out").join("ingest.json")).unwrap()).unwrap();
    assert_eq!(summary["tickers"][1]["sessions"], 160);
}

#[test]
fn bad_input_fails_with_diagnostic() {
    let out = fusecast(&["backtest", "--no-such-flag"]);
    assert!(!out.status.success());
    let fx = Fixture::new();
    let cfg = fx.config("run.toml", "modle = \"ols\"");
    let out = fusecast(&["backtest", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("modle"));
    let cfg = fx.config("run2.toml", "");
    let out = fusecast(&["backtest", "--config", s(&cfg), "--train-end", "2023-06-01"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("test_start"));
}
