//! Bagged regression trees with per-node feature subsampling.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, FeatureSampler, TreeParams};
use super::{ModelError, Result};
use crate::binio;
use crate::text::mix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features considered at each split, in (0, 1].
    pub feature_fraction: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, max_depth: 8, min_leaf: 5, feature_fraction: 1.0 / 3.0, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], params: ForestParams) -> Result<Self> {
        if params.n_trees == 0 {
            return Err(ModelError::BadParam("n_trees must be at least 1".into()));
        }
        if !(params.feature_fraction > 0.0 && params.feature_fraction <= 1.0) {
            return Err(ModelError::BadParam(format!("feature_fraction {} not in (0, 1]", params.feature_fraction)));
        }
        if xs.is_empty() {
            return Err(ModelError::Empty);
        }
        let n = xs.len();
        let p = xs[0].len();
        let per_node = ((params.feature_fraction * p as f64).round() as usize).clamp(1, p.max(1));
        let tree_params = TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf };
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix64(params.seed ^ (t as u64).wrapping_mul(0x9e37_79b9)));
                let mut idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                idx.sort_unstable();
                let sampler = FeatureSampler { rng: &mut rng, per_node };
                DecisionTree::fit_indices(xs, ys, idx, tree_params, Some(sampler))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RandomForest { trees })
    }

    /// Arithmetic mean of the trees' predictions.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for t in &self.trees {
            s += t.predict(x)?;
        }
        Ok(s / self.trees.len() as f64)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u32(w, self.trees.len() as u32)?;
        self.trees.iter().try_for_each(|t| t.write(w))
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let n = binio::read_u32(r)? as usize;
        let trees = (0..n).map(|_| DecisionTree::read(r)).collect::<Result<Vec<_>>>()?;
        if trees.is_empty() {
            return Err(ModelError::BadFile("forest without trees".into()));
        }
        Ok(RandomForest { trees })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..80).map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.91).sin()).collect()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * 2.0 - x[2]).collect();
        (xs, ys)
    }

    #[test]
    fn prediction_is_mean_of_trees() {
        let (xs, ys) = data();
        let f = RandomForest::fit(&xs, &ys, ForestParams { n_trees: 7, ..Default::default() }).unwrap();
        for x in xs.iter().take(10) {
            let mut s = 0.0;
            for t in &f.trees {
                s += t.predict(x).unwrap();
            }
            assert_eq!(f.predict(x).unwrap(), s / 7.0);
        }
    }

    #[test]
    fn single_tree_forest() {
        let (xs, ys) = data();
        let f = RandomForest::fit(&xs, &ys, ForestParams { n_trees: 1, ..Default::default() }).unwrap();
        assert_eq!(f.predict(&xs[3]).unwrap(), f.trees[0].predict(&xs[3]).unwrap());
    }

    #[test]
    fn seeded_and_roundtrips() {
        let (xs, ys) = data();
        let params = ForestParams { n_trees: 5, seed: 11, ..Default::default() };
        let a = RandomForest::fit(&xs, &ys, params).unwrap();
        let b = RandomForest::fit(&xs, &ys, params).unwrap();
        assert_eq!(a, b);
        let c = RandomForest::fit(&xs, &ys, ForestParams { seed: 12, ..params }).unwrap();
        assert_ne!(a, c);
        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        assert_eq!(RandomForest::read(&mut buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn bad_params() {
        let (xs, ys) = data();
        assert!(RandomForest::fit(&xs, &ys, ForestParams { n_trees: 0, ..Default::default() }).is_err());
        assert!(RandomForest::fit(&xs, &ys, ForestParams { feature_fraction: 0.0, ..Default::default() }).is_err());
    }
}
