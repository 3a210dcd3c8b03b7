//! Next-session return regressors: the LSTM and five classical baselines.
//!
//! Every model reads the flat feature vector `x_price ‖ x_news` of a
//! [`FeatureRow`]. Model files start with a four-byte magic naming the
//! variant and a `u32` format version, followed by `f64` parameters.

pub mod forest;
pub mod gbt;
pub mod knn;
pub mod linear;
pub mod lstm;
pub mod tree;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::features::FeatureRow;

pub use forest::{ForestParams, RandomForest};
pub use gbt::{GbtParams, GradientBoosting};
pub use knn::KnnModel;
pub use linear::LinearModel;
pub use lstm::{LossCurve, LstmNet, LstmRegressor, LstmShape, NewsPlacement, TrainConfig};
pub use tree::{DecisionTree, TreeParams};

const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature length mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("no training rows")]
    Empty,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("normal equations are not positive definite")]
    Singular,
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("bad model file: {0}")]
    BadFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Lstm,
    Ols,
    Knn,
    Dt,
    Rf,
    Gbt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] =
        [ModelKind::Lstm, ModelKind::Ols, ModelKind::Knn, ModelKind::Dt, ModelKind::Rf, ModelKind::Gbt];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Ols => "ols",
            ModelKind::Knn => "knn",
            ModelKind::Dt => "dt",
            ModelKind::Rf => "rf",
            ModelKind::Gbt => "gbt",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Lstm => "LSTM",
            ModelKind::Ols => "LinReg",
            ModelKind::Knn => "KNN",
            ModelKind::Dt => "DT",
            ModelKind::Rf => "RF",
            ModelKind::Gbt => "GBT",
        }
    }

    fn magic(self) -> &'static [u8; 4] {
        match self {
            ModelKind::Lstm => b"LSTM",
            ModelKind::Ols => b"OLS1",
            ModelKind::Knn => b"KNN1",
            ModelKind::Dt => b"TREE",
            ModelKind::Rf => b"RF01",
            ModelKind::Gbt => b"GBT1",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown model {s:?} (expected lstm, ols, knn, dt, rf or gbt)"))
    }
}

/// Hyperparameters for every variant; only the selected one is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub lstm: TrainConfig,
    pub knn_k: usize,
    pub ols_ridge: f64,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub gbt: GbtParams,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            lstm: TrainConfig::default(),
            knn_k: 5,
            ols_ridge: linear::RIDGE,
            tree: TreeParams::default(),
            forest: ForestParams::default(),
            gbt: GbtParams::default(),
        }
    }
}

impl ModelParams {
    /// Copy with every seed replaced by `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut p = self.clone();
        p.lstm.seed = seed;
        p.forest.seed = seed;
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lstm(LstmRegressor),
    Ols(LinearModel),
    Knn(KnnModel),
    Tree(DecisionTree),
    Forest(RandomForest),
    Gbt(GradientBoosting),
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: Model,
    /// Present for iteratively trained models.
    pub curve: Option<LossCurve>,
}

fn design(rows: &[FeatureRow]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let first = rows.first().ok_or(ModelError::Empty)?;
    let width = first.feature_len();
    let mut xs = Vec::with_capacity(rows.len());
    for r in rows {
        if r.feature_len() != width {
            return Err(ModelError::ShapeMismatch { expected: width, found: r.feature_len() });
        }
        xs.push(r.flat_features());
    }
    Ok((xs, rows.iter().map(|r| r.y).collect()))
}

/// Fits `kind` on `train`. `heldout` only feeds the LSTM's loss curve.
pub fn fit_model(kind: ModelKind, params: &ModelParams, train: &[FeatureRow], heldout: &[FeatureRow]) -> Result<FitOutput> {
    if kind == ModelKind::Lstm {
        let (model, curve) = lstm::train_lstm(train, heldout, &params.lstm)?;
        return Ok(FitOutput { model: Model::Lstm(model), curve: Some(curve) });
    }
    let (xs, ys) = design(train)?;
    let model = match kind {
        ModelKind::Ols => Model::Ols(LinearModel::fit(&xs, &ys, params.ols_ridge)?),
        ModelKind::Knn => Model::Knn(KnnModel::fit(params.knn_k, &xs, &ys)?),
        ModelKind::Dt => Model::Tree(DecisionTree::fit(&xs, &ys, params.tree)?),
        ModelKind::Rf => Model::Forest(RandomForest::fit(&xs, &ys, params.forest)?),
        ModelKind::Gbt => Model::Gbt(GradientBoosting::fit(&xs, &ys, params.gbt)?),
        ModelKind::Lstm => unreachable!(),
    };
    Ok(FitOutput { model, curve: None })
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Lstm(_) => ModelKind::Lstm,
            Model::Ols(_) => ModelKind::Ols,
            Model::Knn(_) => ModelKind::Knn,
            Model::Tree(_) => ModelKind::Dt,
            Model::Forest(_) => ModelKind::Rf,
            Model::Gbt(_) => ModelKind::Gbt,
        }
    }

    /// Predicted return for a flat feature vector.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            Model::Lstm(m) => m.predict(x),
            Model::Ols(m) => m.predict(x),
            Model::Knn(m) => m.predict(x),
            Model::Tree(m) => m.predict(x),
            Model::Forest(m) => m.predict(x),
            Model::Gbt(m) => m.predict(x),
        }
    }

    pub fn predict_row(&self, row: &FeatureRow) -> Result<f64> {
        self.predict(&row.flat_features())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.kind().magic())?;
        binio::write_u32(&mut w, MODEL_FILE_VERSION)?;
        match self {
            Model::Lstm(m) => m.write(&mut w),
            Model::Ols(m) => m.write(&mut w),
            Model::Knn(m) => m.write(&mut w),
            Model::Tree(m) => m.write(&mut w),
            Model::Forest(m) => m.write(&mut w),
            Model::Gbt(m) => m.write(&mut w),
        }
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let magic = binio::read_magic(&mut r)?;
        let kind = ModelKind::ALL
            .into_iter()
            .find(|k| k.magic() == &magic)
            .ok_or_else(|| ModelError::BadFile(format!("unknown magic {magic:?}")))?;
        let version = binio::read_u32(&mut r)?;
        if version != MODEL_FILE_VERSION {
            return Err(ModelError::BadFile(format!("unsupported version {version}")));
        }
        let r = &mut r;
        Ok(match kind {
            ModelKind::Lstm => Model::Lstm(LstmRegressor::read(r)?),
            ModelKind::Ols => Model::Ols(LinearModel::read(r)?),
            ModelKind::Knn => Model::Knn(KnnModel::read(r)?),
            ModelKind::Dt => Model::Tree(DecisionTree::read(r)?),
            ModelKind::Rf => Model::Forest(RandomForest::read(r)?),
            ModelKind::Gbt => Model::Gbt(GradientBoosting::read(r)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn rows(n: usize) -> Vec<FeatureRow> {
        (0..n)
            .map(|i| FeatureRow {
                ticker: "T".into(),
                target_date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Days::new(i as u64),
                x_price: (0..20).map(|j| ((i * 20 + j) as f64 * 0.61).sin() * 0.02).collect(),
                x_news: None,
                y: ((i as f64) * 0.83).sin() * 0.01,
            })
            .collect()
    }

    #[test]
    fn every_variant_fits_predicts_and_roundtrips() {
        let train = rows(60);
        let mut params = ModelParams::default();
        params.lstm.epochs = 2;
        params.lstm.hidden = 4;
        params.forest.n_trees = 3;
        params.gbt.rounds = 5;
        for kind in ModelKind::ALL {
            let fit = fit_model(kind, &params, &train, &train[..5]).unwrap();
            assert_eq!(fit.model.kind(), kind);
            assert_eq!(fit.curve.is_some(), kind == ModelKind::Lstm);
            let mut buf = Vec::new();
            fit.model.write(&mut buf).unwrap();
            assert_eq!(&buf[..4], kind.magic());
            let back = Model::read(buf.as_slice()).unwrap();
            assert_eq!(back, fit.model, "{kind}");
            let p = back.predict_row(&train[7]).unwrap();
            assert!(p.is_finite());
            assert!(back.predict(&[0.0; 19]).is_err());
        }
    }

    #[test]
    fn seeded_fits_are_bit_identical() {
        let train = rows(50);
        let mut params = ModelParams::default();
        params.lstm.epochs = 2;
        params.lstm.hidden = 4;
        params.forest.n_trees = 4;
        params.gbt.rounds = 4;
        for kind in ModelKind::ALL {
            let a = fit_model(kind, &params, &train, &[]).unwrap().model;
            let b = fit_model(kind, &params, &train, &[]).unwrap().model;
            let (mut ba, mut bb) = (Vec::new(), Vec::new());
            a.write(&mut ba).unwrap();
            b.write(&mut bb).unwrap();
            assert_eq!(ba, bb, "{kind}");
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_model(ModelKind::Ols, &ModelParams::default(), &[], &[]), Err(ModelError::Empty)));
        assert!(matches!(fit_model(ModelKind::Lstm, &ModelParams::default(), &[], &[]), Err(ModelError::Empty)));
        let mut mixed = rows(10);
        mixed[3].x_news = Some(vec![1.0]);
        assert!(matches!(
            fit_model(ModelKind::Knn, &ModelParams::default(), &mixed, &[]),
            Err(ModelError::ShapeMismatch { .. })
        ));
        assert!(Model::read(&b"NOPE"[..]).is_err());
        assert_eq!("RF".parse::<ModelKind>().unwrap(), ModelKind::Rf);
        assert!("xgb".parse::<ModelKind>().is_err());
    }
}
