//! Gradient-boosted regression trees on squared loss: each round fits a
//! shallow tree to the current residuals and adds it with shrinkage.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, TreeParams};
use super::{ModelError, Result};
use crate::binio;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub rounds: usize,
    pub shrinkage: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams { rounds: 100, shrinkage: 0.1, max_depth: 3, min_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoosting {
    pub base: f64,
    pub shrinkage: f64,
    pub trees: Vec<DecisionTree>,
}

impl GradientBoosting {
    /// Returns the model and the training MSE after each round (entry 0 is
    /// the base prediction alone).
    pub fn fit_with_trace(xs: &[Vec<f64>], ys: &[f64], params: GbtParams) -> Result<(Self, Vec<f64>)> {
        if !(params.shrinkage > 0.0 && params.shrinkage <= 1.0) {
            return Err(ModelError::BadParam(format!("shrinkage {} not in (0, 1]", params.shrinkage)));
        }
        if xs.is_empty() {
            return Err(ModelError::Empty);
        }
        let n = ys.len() as f64;
        let base = ys.iter().sum::<f64>() / n;
        let mut fitted = vec![base; ys.len()];
        let mse = |f: &[f64]| f.iter().zip(ys).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let mut trace = vec![mse(&fitted)];
        let tree_params = TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf };
        let mut trees = Vec::with_capacity(params.rounds);
        for _ in 0..params.rounds {
            let residual: Vec<f64> = ys.iter().zip(&fitted).map(|(y, f)| y - f).collect();
            let tree = DecisionTree::fit(xs, &residual, tree_params)?;
            for (f, x) in fitted.iter_mut().zip(xs) {
                *f += params.shrinkage * tree.predict(x)?;
            }
            trace.push(mse(&fitted));
            trees.push(tree);
        }
        Ok((GradientBoosting { base, shrinkage: params.shrinkage, trees }, trace))
    }

    pub fn fit(xs: &[Vec<f64>], ys: &[f64], params: GbtParams) -> Result<Self> {
        Self::fit_with_trace(xs, ys, params).map(|(m, _)| m)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let mut out = self.base;
        for t in &self.trees {
            out += self.shrinkage * t.predict(x)?;
        }
        Ok(out)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_f64(w, self.base)?;
        binio::write_f64(w, self.shrinkage)?;
        binio::write_u32(w, self.trees.len() as u32)?;
        self.trees.iter().try_for_each(|t| t.write(w))
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let base = binio::read_f64(r)?;
        let shrinkage = binio::read_f64(r)?;
        let n = binio::read_u32(r)? as usize;
        let trees = (0..n).map(|_| DecisionTree::read(r)).collect::<Result<Vec<_>>>()?;
        Ok(GradientBoosting { base, shrinkage, trees })
    }
}
