use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use fusecast_core::dedup::DedupTrainConfig;
use fusecast_core::newscorpus::MatchFields;
use fusecast_core::{AggregationMode, AlignmentConfig, Modality, ModelKind, ModelParams};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of `<TICKER>.csv` candle files.
    pub candles: Option<PathBuf>,
    /// Line-delimited JSON news corpus.
    pub news: Option<PathBuf>,
    /// Company registry CSV (`ticker,name,description`).
    pub registry: Option<PathBuf>,
    /// Extra `ticker,keyword` rows appended to the TF-IDF keywords.
    pub keyword_supplement: Option<PathBuf>,
    /// EMB1 embedding file.
    pub embeddings: Option<PathBuf>,
    /// Duplicate classifier applied to the corpus before matching.
    pub dedup_model: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeywordOptions {
    pub k: usize,
    pub fields: MatchFields,
}

impl Default for KeywordOptions {
    fn default() -> Self {
        KeywordOptions { k: 30, fields: MatchFields::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupOptions {
    pub window_days: i64,
    pub train: DedupTrainConfig,
}

impl Default for DedupOptions {
    fn default() -> Self {
        DedupOptions { window_days: 3, train: DedupTrainConfig::default() }
    }
}

/// Everything a pipeline run depends on. Defaults, then the config file,
/// then command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub jobs: usize,
    pub model: ModelKind,
    pub modality: Modality,
    pub aggregation: AggregationMode,
    pub normalize_embeddings: bool,
    pub train_end: Option<NaiveDate>,
    pub test_start: Option<NaiveDate>,
    pub paths: Paths,
    pub keywords: KeywordOptions,
    pub align: AlignmentConfig,
    pub dedup: DedupOptions,
    pub params: ModelParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            jobs: 1,
            model: ModelKind::Lstm,
            modality: Modality::Single,
            aggregation: AggregationMode::Mean,
            normalize_embeddings: false,
            train_end: None,
            test_start: None,
            paths: Paths { out: PathBuf::from("out"), ..Paths::default() },
            keywords: KeywordOptions::default(),
            align: AlignmentConfig::default(),
            dedup: DedupOptions::default(),
            params: ModelParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing resolved config")
    }

    /// Writes the resolved config into the output directory.
    pub fn save_resolved(&self) -> Result<PathBuf> {
        let path = self.paths.out.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn split(&self) -> Result<(NaiveDate, NaiveDate)> {
        let Some(train_end) = self.train_end else { bail!("train_end: required") };
        let Some(test_start) = self.test_start else { bail!("test_start: required") };
        if train_end >= test_start {
            bail!("test_start: {test_start} must come after train_end {train_end}");
        }
        Ok((train_end, test_start))
    }

    /// Checks settings that do not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            bail!("jobs: must be at least 1");
        }
        if i64::try_from(self.seed).is_err() {
            bail!("seed: must be at most {}", i64::MAX);
        }
        if self.align.window_days == 0 {
            bail!("align.window_days: must be at least 1");
        }
        if self.keywords.k == 0 {
            bail!("keywords.k: must be at least 1");
        }
        if self.dedup.window_days < 0 {
            bail!("dedup.window_days: must not be negative");
        }
        let lstm = &self.params.lstm;
        if lstm.epochs == 0 {
            bail!("params.lstm.epochs: must be at least 1");
        }
        if lstm.batch_size == 0 {
            bail!("params.lstm.batch_size: must be at least 1");
        }
        if !(lstm.learning_rate > 0.0 && lstm.learning_rate.is_finite()) {
            bail!("params.lstm.learning_rate: must be positive");
        }
        if self.params.knn_k == 0 {
            bail!("params.knn_k: must be at least 1");
        }
        Ok(())
    }

    /// Checks that the inputs a dual-modality run needs are configured and exist.
    pub fn validate_news_inputs(&self) -> Result<()> {
        if self.modality != Modality::Dual {
            return Ok(());
        }
        let Some(emb) = &self.paths.embeddings else {
            bail!("paths.embeddings: required when modality = \"dual\"");
        };
        require_file("paths.embeddings", emb)?;
        let Some(news) = &self.paths.news else {
            bail!("paths.news: required when modality = \"dual\"");
        };
        require_file("paths.news", news)?;
        if self.paths.registry.is_none() && self.paths.keyword_supplement.is_none() {
            bail!("paths.registry: required when modality = \"dual\" (or set paths.keyword_supplement)");
        }
        if let Some(p) = &self.paths.registry {
            require_file("paths.registry", p)?;
        }
        if let Some(p) = &self.paths.keyword_supplement {
            require_file("paths.keyword_supplement", p)?;
        }
        if let Some(p) = &self.paths.dedup_model {
            require_file("paths.dedup_model", p)?;
        }
        Ok(())
    }

    pub fn candles_dir(&self) -> Result<&Path> {
        let Some(dir) = &self.paths.candles else { bail!("paths.candles: required") };
        if !dir.is_dir() {
            bail!("paths.candles: directory not found: {}", dir.display());
        }
        Ok(dir)
    }
}

pub fn require_file(field: &str, path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("{field}: file not found: {}", path.display());
    }
    Ok(())
}

pub fn required<'a>(field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
    let Some(p) = value else { bail!("{field}: required") };
    require_file(field, p)?;
    Ok(p)
}
