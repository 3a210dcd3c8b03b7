mod common;

use common::*;
use fusecast_core::models::{DecisionTree, KnnModel, LinearModel, LstmNet, LstmShape, NewsPlacement, TreeParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
}

#[test]
fn knn_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..30 {
        let n = rng.gen_range(1..=200);
        let p = rng.gen_range(1..=6);
        let k = rng.gen_range(1..=8);
        let xs = random_matrix(&mut rng, n, p);
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = KnnModel::fit(k, &xs, &ys).unwrap();
        for _ in 0..10 {
            let q: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert_eq!(model.predict(&q).unwrap(), knn_brute(&xs, &ys, k, &q));
        }
    }
}

#[test]
fn knn_ties_go_to_lower_index() {
    // every training point is equidistant from the query
    let xs = vec![vec![1.0], vec![-1.0], vec![1.0], vec![-1.0], vec![1.0]];
    let ys = vec![10.0, 20.0, 30.0, 40.0, 50.0];
    let model = KnnModel::fit(2, &xs, &ys).unwrap();
    assert_eq!(model.neighbours(&[0.0]).unwrap(), vec![0, 1]);
    assert_eq!(model.predict(&[0.0]).unwrap(), 15.0);
    assert_eq!(knn_brute(&xs, &ys, 2, &[0.0]), 15.0);
}

#[test]
fn tree_matches_exhaustive_split_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..200 {
        let n = rng.gen_range(2..=20);
        let p = rng.gen_range(1..=3);
        // coarse grid values produce repeated feature values
        let xs: Vec<Vec<f64>> = if trial % 2 == 0 {
            random_matrix(&mut rng, n, p)
        } else {
            (0..n).map(|_| (0..p).map(|_| f64::from(rng.gen_range(0..4u8))).collect()).collect()
        };
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = TreeParams { max_depth: rng.gen_range(1..=5), min_leaf: rng.gen_range(1..=3) };
        let tree = DecisionTree::fit(&xs, &ys, params).unwrap();
        let oracle = oracle_tree(&xs, &ys, (0..n).collect(), 0, params.max_depth, params.min_leaf);
        for x in xs.iter().chain(random_matrix(&mut rng, 10, p).iter()) {
            assert_eq!(tree.predict(x).unwrap(), oracle.predict(x), "trial {trial}");
        }
    }
}

#[test]
fn ols_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let p = rng.gen_range(1..=8);
        let n = rng.gen_range(p + 5..=120);
        let xs = random_matrix(&mut rng, n, p);
        let ys: Vec<f64> =
            xs.iter().map(|x| 0.3 + x.iter().enumerate().map(|(j, v)| (j as f64 - 2.0) * v).sum::<f64>() + rng.gen_range(-0.5..0.5)).collect();
        let model = LinearModel::fit(&xs, &ys, fusecast_core::models::linear::RIDGE).unwrap();
        let (b0, beta) = ols_normal_equations(&xs, &ys);
        assert!((model.intercept - b0).abs() < 1e-8);
        for (a, b) in model.coef.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        for x in &xs {
            let oracle = b0 + beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
            assert!((model.predict(x).unwrap() - oracle).abs() < 1e-8);
        }
    }
}

#[test]
fn ols_recovers_exact_linear_relation() {
    let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 2.0 * x[0] + 0.5 * x[1]).collect();
    let m = LinearModel::fit(&xs, &ys, 0.0).unwrap();
    assert!((m.intercept - 1.5).abs() < 1e-9);
    assert!((m.coef[0] + 2.0).abs() < 1e-9);
    assert!((m.coef[1] - 0.5).abs() < 1e-9);
}

#[test]
fn lstm_forward_matches_cell_by_cell_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..30 {
        let shape = LstmShape {
            price_dim: rng.gen_range(1..=4),
            steps: rng.gen_range(1..=6),
            news_dim: rng.gen_range(0..=5),
            hidden: rng.gen_range(1..=8),
            news_at: if trial % 2 == 0 { NewsPlacement::Last } else { NewsPlacement::All },
        };
        let net = LstmNet::new_random(shape, trial).unwrap();
        let x: Vec<f64> = (0..shape.input_len()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let got = net.forward(&x).unwrap();
        let want = lstm_reference(&net, &x);
        assert!((got - want).abs() < 1e-12, "trial {trial}: {got} vs {want}");
    }
}

#[test]
fn lstm_gradient_matches_finite_differences() {
    for seed in 0..100 {
        let err = lstm_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn pair_classifier_gradient_matches_finite_differences() {
    for seed in 0..100 {
        let err = mlp_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}
