//! Independent reference implementations used as test oracles.

#![allow(dead_code, clippy::needless_range_loop)]

use fusecast_core::models::{LstmNet, NewsPlacement};

/// Mean target of the `k` nearest rows by squared Euclidean distance,
/// ties going to the lower index. Full sort, no selection tricks.
pub fn knn_brute(xs: &[Vec<f64>], ys: &[f64], k: usize, q: &[f64]) -> f64 {
    let mut all: Vec<(f64, usize)> = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut d = 0.0;
            for j in 0..q.len() {
                d += (x[j] - q[j]) * (x[j] - q[j]);
            }
            (d, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let k = k.min(all.len());
    let mut s = 0.0;
    for &(_, i) in &all[..k] {
        s += ys[i];
    }
    s / k as f64
}

/// Regression tree grown by trying every threshold between consecutive
/// distinct feature values and recomputing both sides' squared error from
/// scratch. A candidate must beat the incumbent by more than `1e-12` of the
/// parent's squared error.
pub enum OracleTree {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<OracleTree>, right: Box<OracleTree> },
}

fn mean(ys: &[f64], idx: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in idx {
        s += ys[i];
    }
    s / idx.len() as f64
}

fn sse(ys: &[f64], idx: &[usize]) -> f64 {
    let m = mean(ys, idx);
    idx.iter().map(|&i| (ys[i] - m) * (ys[i] - m)).sum()
}

fn between(lo: f64, hi: f64) -> f64 {
    let m = (lo + hi) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

pub fn oracle_tree(xs: &[Vec<f64>], ys: &[f64], idx: Vec<usize>, depth: usize, max_depth: usize, min_leaf: usize) -> OracleTree {
    let leaf = OracleTree::Leaf(mean(ys, &idx));
    let parent = sse(ys, &idx);
    if depth >= max_depth || idx.len() < 2 * min_leaf || parent <= 0.0 {
        return leaf;
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..xs[0].len() {
        let mut values: Vec<f64> = idx.iter().map(|&i| xs[i][f]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for w in values.windows(2) {
            let thr = between(w[0], w[1]);
            let left: Vec<usize> = idx.iter().copied().filter(|&i| xs[i][f] <= thr).collect();
            let right: Vec<usize> = idx.iter().copied().filter(|&i| xs[i][f] > thr).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let total = sse(ys, &left) + sse(ys, &right);
            if best.is_none() || total < best.unwrap().2 - 1e-12 * parent {
                best = Some((f, thr, total));
            }
        }
    }
    let Some((feature, threshold, total)) = best else { return leaf };
    if total >= parent * (1.0 - 1e-10) {
        return leaf;
    }
    let left: Vec<usize> = idx.iter().copied().filter(|&i| xs[i][feature] <= threshold).collect();
    let right: Vec<usize> = idx.iter().copied().filter(|&i| xs[i][feature] > threshold).collect();
    OracleTree::Split {
        feature,
        threshold,
        left: Box::new(oracle_tree(xs, ys, left, depth + 1, max_depth, min_leaf)),
        right: Box::new(oracle_tree(xs, ys, right, depth + 1, max_depth, min_leaf)),
    }
}

impl OracleTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            OracleTree::Leaf(v) => *v,
            OracleTree::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

/// Least squares with an intercept column, solved from the uncentered
/// normal equations by Gaussian elimination with partial pivoting.
/// Returns `(intercept, coefficients)`.
pub fn ols_normal_equations(xs: &[Vec<f64>], ys: &[f64]) -> (f64, Vec<f64>) {
    let p = xs[0].len() + 1;
    let mut a = vec![vec![0.0; p + 1]; p];
    for (x, &y) in xs.iter().zip(ys) {
        let row: Vec<f64> = std::iter::once(1.0).chain(x.iter().copied()).collect();
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * y;
        }
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let factor = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= factor * a[col][c];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..p).map(|i| a[i][p] / a[i][i]).collect();
    (beta[0], beta[1..].to_vec())
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Forward pass written as explicit per-gate matrix-vector products. Gate
/// blocks are ordered input, forget, cell, output; parameters are laid out
/// as input weights (price then news), recurrent weights, biases, head.
pub fn lstm_reference(net: &LstmNet, x: &[f64]) -> f64 {
    let s = net.shape();
    let (h, steps, pd, nd) = (s.hidden, s.steps, s.price_dim, s.news_dim);
    let p = net.params();
    let rows = 4 * h;
    let wp = |r: usize, c: usize| p[r * pd + c];
    let wn_base = rows * pd;
    let u_base = wn_base + rows * nd;
    let b_base = u_base + rows * h;
    let head_base = b_base + rows;
    let news = &x[pd * steps..];
    let mut hid = vec![0.0; h];
    let mut cell = vec![0.0; h];
    for t in 0..steps {
        let input: Vec<f64> = (0..pd).map(|f| x[f * steps + t]).collect();
        let with_news = nd > 0 && (s.news_at == NewsPlacement::All || t == steps - 1);
        let pre = |r: usize| {
            let mut z = p[b_base + r];
            for c in 0..pd {
                z += wp(r, c) * input[c];
            }
            if with_news {
                for c in 0..nd {
                    z += p[wn_base + r * nd + c] * news[c];
                }
            }
            for c in 0..h {
                z += p[u_base + r * h + c] * hid[c];
            }
            z
        };
        let mut next_h = vec![0.0; h];
        let mut next_c = vec![0.0; h];
        for k in 0..h {
            let i = logistic(pre(k));
            let f = logistic(pre(h + k));
            let g = pre(2 * h + k).tanh();
            let o = logistic(pre(3 * h + k));
            next_c[k] = f * cell[k] + i * g;
            next_h[k] = o * next_c[k].tanh();
        }
        hid = next_h;
        cell = next_c;
    }
    let mut out = p[head_base + h];
    for k in 0..h {
        out += p[head_base + k] * hid[k];
    }
    out
}

/// Central finite-difference gradient of `loss` at `params`.
pub fn numeric_gradient(params: &[f64], step: f64, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + step;
            let up = loss(&work);
            work[i] = orig - step;
            let down = loss(&work);
            work[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all components.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

/// Gradient check of the LSTM's batch MSE on a small random instance.
pub fn lstm_gradient_error(seed: u64) -> f64 {
    use fusecast_core::models::LstmShape;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shape = LstmShape {
        price_dim: rng.gen_range(1..=4),
        steps: rng.gen_range(1..=5),
        news_dim: rng.gen_range(0..=3),
        hidden: rng.gen_range(1..=4),
        news_at: if rng.gen_bool(0.5) { NewsPlacement::Last } else { NewsPlacement::All },
    };
    let mut net = LstmNet::new_random(shape, seed).unwrap();
    let params: Vec<f64> = net.params().iter().map(|p| p + rng.gen_range(-0.3..0.3)).collect();
    net.set_params(&params);
    let batch = rng.gen_range(1..=4);
    let inputs: Vec<Vec<f64>> =
        (0..batch).map(|_| (0..shape.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let targets: Vec<f64> = (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let (_, analytic) = net.loss_and_gradient(&refs, &targets).unwrap();
    let mut probe = net.clone();
    let numeric = numeric_gradient(&params, FD_STEP, |p| {
        probe.set_params(p);
        probe.loss_and_gradient(&refs, &targets).unwrap().0
    });
    max_relative_error(&analytic, &numeric, FD_FLOOR)
}

/// Gradient check of the pair classifier's mean binary cross-entropy.
pub fn mlp_gradient_error(seed: u64) -> f64 {
    use fusecast_core::dedup::PairClassifier;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(1..=4);
    let hidden: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(2..=6)).collect();
    let mut clf = PairClassifier::new_random(dim, &hidden, 0.5, seed).unwrap();
    let batch = rng.gen_range(1..=5);
    let inputs: Vec<Vec<f64>> =
        (0..batch).map(|_| (0..2 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let targets: Vec<f64> = (0..batch).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
    // random biases too, so no pre-activation sits exactly on the ReLU kink
    let params: Vec<f64> = clf.params().iter().map(|p| p + rng.gen_range(-0.3..0.3)).collect();
    clf.set_params(&params);
    let (_, analytic) = clf.loss_and_gradient(&inputs, &targets);
    let numeric = numeric_gradient(&params, FD_STEP, |p| {
        clf.set_params(p);
        clf.loss_and_gradient(&inputs, &targets).0
    });
    max_relative_error(&analytic, &numeric, FD_FLOOR)
}
