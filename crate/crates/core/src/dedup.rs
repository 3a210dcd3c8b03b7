//! Rewritten-news detection: a three-layer MLP scores the concatenation of
//! two article vectors, and a one-shot filter drops arrivals that score as
//! duplicates of an already retained article.

use std::io::{Read, Write};

use chrono::{Duration, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::embedding::EmbeddingStore;
use crate::optim::{sigmoid, Adam, AdamConfig};

pub const CLASSIFIER_MAGIC: &[u8; 4] = b"DDP1";
const CLASSIFIER_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("pair set is empty")]
    EmptyPairs,
    #[error("training pairs contain a single class")]
    SingleClass,
    #[error("article {0:?} has no embedding")]
    MissingEmbedding(String),
    #[error("pair references the same article twice: {0:?}")]
    SelfPair(String),
    #[error("threshold must be in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("invalid layer widths {0:?}")]
    BadWidths(Vec<usize>),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("bad classifier file: {0}")]
    BadFile(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DedupError>;

/// `[a ‖ b]`.
pub fn pair_features(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(DedupError::DimMismatch(a.len(), b.len()));
    }
    let mut out = Vec::with_capacity(a.len() * 2);
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLabel {
    Duplicate,
    Distinct,
}

impl PairLabel {
    fn target(self) -> f64 {
        match self {
            PairLabel::Duplicate => 1.0,
            PairLabel::Distinct => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub id_a: String,
    pub id_b: String,
    pub label: PairLabel,
}

impl LabeledPair {
    pub fn new(id_a: impl Into<String>, id_b: impl Into<String>, label: PairLabel) -> Result<Self> {
        let (id_a, id_b) = (id_a.into(), id_b.into());
        if id_a == id_b {
            return Err(DedupError::SelfPair(id_a));
        }
        Ok(LabeledPair { id_a, id_b, label })
    }
}

/// Reads `id_a,id_b,label` rows; labels are `1`/`0`, `duplicate`/`distinct`
/// or `true`/`false`. A header row is skipped.
pub fn parse_pairs<R: Read>(reader: R) -> Result<Vec<LabeledPair>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 1;
        if rec.len() != 3 {
            return Err(DedupError::Malformed { line, message: format!("expected 3 fields, got {}", rec.len()) });
        }
        if idx == 0 && rec[0].eq_ignore_ascii_case("id_a") {
            continue;
        }
        let label = match rec[2].to_ascii_lowercase().as_str() {
            "1" | "duplicate" | "dup" | "true" => PairLabel::Duplicate,
            "0" | "distinct" | "false" => PairLabel::Distinct,
            other => {
                return Err(DedupError::Malformed { line, message: format!("unknown label {other:?}") });
            }
        };
        out.push(LabeledPair::new(&rec[0], &rec[1], label)?);
    }
    Ok(out)
}

pub fn write_pairs<W: Write>(pairs: &[LabeledPair], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id_a", "id_b", "label"])?;
    for p in pairs {
        let label = match p.label {
            PairLabel::Duplicate => "1",
            PairLabel::Distinct => "0",
        };
        w.write_record([p.id_a.as_str(), p.id_b.as_str(), label])?;
    }
    w.flush()?;
    Ok(())
}

/// Fully connected ReLU network with a single logit output. Parameters live
/// in one flat buffer: for each layer the `out x in` row-major weights, then
/// the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct PairClassifier {
    widths: Vec<usize>,
    params: Vec<f64>,
    threshold: f64,
}

struct LayerView {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl PairClassifier {
    /// `hidden` are the widths between the `2 * dim` input and the scalar output.
    pub fn new_random(dim: usize, hidden: &[usize], threshold: f64, seed: u64) -> Result<Self> {
        let mut widths = vec![2 * dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let mut clf = Self::zeros(widths, threshold)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in clf.layers() {
            let bound = 1.0 / (layer.n_in as f64).sqrt();
            for p in &mut clf.params[layer.w..layer.b] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(clf)
    }

    pub fn zeros(widths: Vec<usize>, threshold: f64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) || *widths.last().unwrap() != 1 || widths[0] % 2 != 0 {
            return Err(DedupError::BadWidths(widths));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(DedupError::BadThreshold(threshold));
        }
        let n = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(PairClassifier { widths, params: vec![0.0; n], threshold })
    }

    fn layers(&self) -> Vec<LayerView> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let v = LayerView { w: off, b: off + w[0] * w[1], n_in: w[0], n_out: w[1] };
                off += w[0] * w[1] + w[1];
                v
            })
            .collect()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Embedding dimension of a single article.
    pub fn dim(&self) -> usize {
        self.widths[0] / 2
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(DedupError::BadThreshold(threshold));
        }
        self.threshold = threshold;
        Ok(())
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len());
        self.params.copy_from_slice(params);
    }

    /// Activations of every layer; the last entry holds the logit.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut acts = vec![x.to_vec()];
        for (li, l) in layers.iter().enumerate() {
            let input = &acts[li];
            let w = &self.params[l.w..l.b];
            let b = &self.params[l.b..l.b + l.n_out];
            let out: Vec<f64> = (0..l.n_out)
                .map(|o| {
                    let z = b[o] + w[o * l.n_in..(o + 1) * l.n_in].iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
                    if li == last {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn logit(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.widths[0] {
            return Err(DedupError::DimMismatch(features.len(), self.widths[0]));
        }
        Ok(self.forward_all(features).last().unwrap()[0])
    }

    /// Probability that `b` is a rewrite of `a`.
    pub fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(&pair_features(a, b)?)?))
    }

    pub fn is_duplicate(&self, a: &[f64], b: &[f64]) -> Result<bool> {
        Ok(self.score(a, b)? >= self.threshold)
    }

    /// Mean binary cross-entropy over the batch and its gradient with respect
    /// to the flat parameter buffer.
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<f64>) {
        let layers = self.layers();
        let n = inputs.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (x, &y) in inputs.iter().zip(targets) {
            let acts = self.forward_all(x);
            let z = acts.last().unwrap()[0];
            // softplus(z) - y z, written to avoid overflow
            loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
            let mut delta = vec![(sigmoid(z) - y) / n];
            for (li, l) in layers.iter().enumerate().rev() {
                let input = &acts[li];
                for o in 0..l.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    grad[l.b + o] += d;
                    let row = &mut grad[l.w + o * l.n_in..l.w + (o + 1) * l.n_in];
                    row.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
                }
                if li == 0 {
                    break;
                }
                let w = &self.params[l.w..l.b];
                delta = (0..l.n_in)
                    .map(|i| {
                        if input[i] <= 0.0 {
                            return 0.0;
                        }
                        (0..l.n_out).map(|o| delta[o] * w[o * l.n_in + i]).sum()
                    })
                    .collect();
            }
        }
        (loss / n, grad)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CLASSIFIER_MAGIC)?;
        binio::write_u32(&mut w, CLASSIFIER_VERSION)?;
        binio::write_u32(&mut w, self.widths.len() as u32)?;
        for &width in &self.widths {
            binio::write_u32(&mut w, width as u32)?;
        }
        binio::write_u8(&mut w, 0)?; // hidden activation: relu
        binio::write_f64(&mut w, self.threshold)?;
        for &p in &self.params {
            binio::write_f32(&mut w, p as f32)?;
        }
        Ok(())
    }

    /// Reads a `DDP1` file. Weights are stored as `f32`.
    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let magic = binio::read_magic(&mut r)?;
        if &magic != CLASSIFIER_MAGIC {
            return Err(DedupError::BadFile(format!("magic {magic:?}")));
        }
        let version = binio::read_u32(&mut r)?;
        if version != CLASSIFIER_VERSION {
            return Err(DedupError::BadFile(format!("unsupported version {version}")));
        }
        let n = binio::read_u32(&mut r)? as usize;
        if n > 64 {
            return Err(DedupError::BadFile(format!("{n} layers")));
        }
        let widths = (0..n).map(|_| binio::read_u32(&mut r).map(|w| w as usize)).collect::<std::io::Result<Vec<_>>>()?;
        let activation = binio::read_u8(&mut r)?;
        if activation != 0 {
            return Err(DedupError::BadFile(format!("unknown activation {activation}")));
        }
        let threshold = binio::read_f64(&mut r)?;
        let mut clf = Self::zeros(widths, threshold)?;
        for p in clf.params.iter_mut() {
            *p = f64::from(binio::read_f32(&mut r)?);
        }
        Ok(clf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupTrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DedupTrainConfig {
    fn default() -> Self {
        DedupTrainConfig {
            hidden: vec![256, 64],
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            threshold: 0.5,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub classifier: PairClassifier,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Mini-batch Adam on binary cross-entropy. Deterministic given `cfg.seed`.
pub fn train_pair_classifier(
    pairs: &[LabeledPair],
    store: &EmbeddingStore,
    cfg: &DedupTrainConfig,
) -> Result<TrainedClassifier> {
    if pairs.is_empty() {
        return Err(DedupError::EmptyPairs);
    }
    let positives = pairs.iter().filter(|p| p.label == PairLabel::Duplicate).count();
    if positives == 0 || positives == pairs.len() {
        return Err(DedupError::SingleClass);
    }
    let vector = |id: &str| store.article_vector(id).ok_or_else(|| DedupError::MissingEmbedding(id.to_string()));
    let mut inputs = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    for p in pairs {
        inputs.push(pair_features(&vector(&p.id_a)?, &vector(&p.id_b)?)?);
        targets.push(p.label.target());
    }

    let mut clf = PairClassifier::new_random(store.dim(), &cfg.hidden, cfg.threshold, cfg.seed)?;
    let mut opt = Adam::new(AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() }, clf.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(batch).enumerate() {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grad) = clf.loss_and_gradient(&xs, &ys);
            if !loss.is_finite() {
                return Err(DedupError::NonFiniteLoss { epoch, batch: bi });
            }
            total += loss * chunk.len() as f64;
            opt.step(&mut clf.params, &grad);
        }
        epoch_losses.push(total / inputs.len() as f64);
    }
    let correct = inputs
        .iter()
        .zip(&targets)
        .filter(|(x, &y)| {
            let p = sigmoid(clf.forward_all(x).last().unwrap()[0]);
            (p >= clf.threshold) == (y == 1.0)
        })
        .count();
    Ok(TrainedClassifier { classifier: clf, epoch_losses, train_accuracy: correct as f64 / inputs.len() as f64 })
}

/// One-shot filter over articles in arrival order. An article is dropped when
/// it scores as a duplicate of any retained article published within
/// `window` before it.
pub fn filter_duplicates(
    articles: &[(String, NaiveDateTime)],
    store: &EmbeddingStore,
    classifier: &PairClassifier,
    window: Duration,
) -> Result<Vec<String>> {
    let mut retained: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, (id, at)) in articles.iter().enumerate() {
        let v = store.article_vector(id).ok_or_else(|| DedupError::MissingEmbedding(id.clone()))?;
        if v.len() != classifier.dim() {
            return Err(DedupError::DimMismatch(v.len(), classifier.dim()));
        }
        let mut duplicate = false;
        for (j, kept) in retained.iter().rev() {
            if *at - articles[*j].1 > window {
                continue;
            }
            if classifier.is_duplicate(kept, &v)? {
                duplicate = true;
                break;
            }
        }
        if !duplicate {
            retained.push((i, v));
        }
    }
    Ok(retained.into_iter().map(|(i, _)| articles[i].0.clone()).collect())
}
