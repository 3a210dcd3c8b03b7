//! CART regression tree grown greedily by squared-error reduction.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::binio;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 8, min_leaf: 5 }
    }
}

/// A split must cut the parent's squared error by more than this fraction.
pub const MIN_RELATIVE_GAIN: f64 = 1e-10;

/// A later candidate replaces the incumbent only if its squared error is
/// lower by more than this fraction of the parent's, so candidates that
/// differ by rounding alone resolve to the first one scanned.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

/// Per-node feature subsampling for random forests.
pub(crate) struct FeatureSampler<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub per_node: usize,
}

/// Split point between two consecutive distinct sorted values. Falls back to
/// the lower value when the midpoint rounds up to the upper one.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = 0.5 * (lo + hi);
    if m >= hi {
        lo
    } else {
        m
    }
}

pub fn mean_of(ys: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64
}

pub fn sse_of(ys: &[f64], idx: &[usize]) -> f64 {
    let m = mean_of(ys, idx);
    idx.iter().map(|&i| (ys[i] - m).powi(2)).sum()
}

struct Builder<'a, 'r> {
    xs: &'a [Vec<f64>],
    ys: &'a [f64],
    params: TreeParams,
    sampler: Option<FeatureSampler<'r>>,
    nodes: Vec<Node>,
}

impl Builder<'_, '_> {
    fn best_split(&mut self, idx: &[usize], parent: f64) -> Option<(usize, f64, f64)> {
        let p = self.xs[0].len();
        let features: Vec<usize> = match &mut self.sampler {
            Some(s) if s.per_node < p => {
                let mut f = sample(s.rng, p, s.per_node).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let n = idx.len();
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<(usize, f64, f64)> = None;
        let tol = TIE_TOLERANCE * parent;
        let centre = mean_of(self.ys, idx);
        let mut order = idx.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.xs[a][f].total_cmp(&self.xs[b][f]).then(a.cmp(&b)));
            let total_s: f64 = order.iter().map(|&i| self.ys[i] - centre).sum();
            let total_q: f64 = order.iter().map(|&i| (self.ys[i] - centre).powi(2)).sum();
            let (mut s, mut q) = (0.0, 0.0);
            for pos in 1..n {
                let y = self.ys[order[pos - 1]] - centre;
                s += y;
                q += y * y;
                if pos < min_leaf || n - pos < min_leaf {
                    continue;
                }
                let (lo, hi) = (self.xs[order[pos - 1]][f], self.xs[order[pos]][f]);
                if lo >= hi {
                    continue;
                }
                let nl = pos as f64;
                let nr = (n - pos) as f64;
                let sse = (q - s * s / nl) + ((total_q - q) - (total_s - s).powi(2) / nr);
                if best.is_none_or(|b| sse < b.2 - tol) {
                    best = Some((f, midpoint(lo, hi), sse));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(mean_of(self.ys, &idx)));
        if depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf.max(1) {
            return id;
        }
        let parent = sse_of(self.ys, &idx);
        if parent <= 0.0 {
            return id;
        }
        let Some((feature, threshold, sse)) = self.best_split(&idx, parent) else {
            return id;
        };
        if sse >= parent * (1.0 - MIN_RELATIVE_GAIN) {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.xs[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

impl DecisionTree {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], params: TreeParams) -> Result<Self> {
        let idx = (0..xs.len()).collect();
        Self::fit_indices(xs, ys, idx, params, None)
    }

    /// Grows on the rows in `idx` (ascending, repeats allowed).
    pub(crate) fn fit_indices(
        xs: &[Vec<f64>],
        ys: &[f64],
        idx: Vec<usize>,
        params: TreeParams,
        sampler: Option<FeatureSampler<'_>>,
    ) -> Result<Self> {
        if xs.is_empty() || idx.is_empty() {
            return Err(ModelError::Empty);
        }
        let p = xs[0].len();
        if let Some(bad) = xs.iter().find(|x| x.len() != p) {
            return Err(ModelError::ShapeMismatch { expected: p, found: bad.len() });
        }
        let mut b = Builder { xs, ys, params, sampler, nodes: Vec::new() };
        b.grow(idx, 0);
        Ok(DecisionTree { nodes: b.nodes, n_features: p })
    }

    pub fn constant(value: f64, n_features: usize) -> Self {
        DecisionTree { nodes: vec![Node::Leaf(value)], n_features }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(ModelError::ShapeMismatch { expected: self.n_features, found: x.len() });
        }
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return Ok(v),
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u32(w, self.n_features as u32)?;
        binio::write_u32(w, self.nodes.len() as u32)?;
        for node in &self.nodes {
            match *node {
                Node::Leaf(v) => {
                    binio::write_u8(w, 0)?;
                    binio::write_f64(w, v)?;
                }
                Node::Split { feature, threshold, left, right } => {
                    binio::write_u8(w, 1)?;
                    binio::write_u32(w, feature as u32)?;
                    binio::write_f64(w, threshold)?;
                    binio::write_u32(w, left as u32)?;
                    binio::write_u32(w, right as u32)?;
                }
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let n_features = binio::read_u32(r)? as usize;
        let n = binio::read_u32(r)? as usize;
        let mut nodes = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            nodes.push(match binio::read_u8(r)? {
                0 => Node::Leaf(binio::read_f64(r)?),
                1 => Node::Split {
                    feature: binio::read_u32(r)? as usize,
                    threshold: binio::read_f64(r)?,
                    left: binio::read_u32(r)? as usize,
                    right: binio::read_u32(r)? as usize,
                },
                t => return Err(ModelError::BadFile(format!("node tag {t}"))),
            });
        }
        let valid = !nodes.is_empty()
            && nodes.iter().enumerate().all(|(i, node)| match *node {
                Node::Leaf(_) => true,
                Node::Split { feature, left, right, .. } => {
                    feature < n_features && left > i && right > i && left < n && right < n
                }
            });
        if !valid {
            return Err(ModelError::BadFile("inconsistent tree nodes".into()));
        }
        Ok(DecisionTree { nodes, n_features })
    }
}
