//! Brute-force k-nearest-neighbours regression (Euclidean, uniform weights).

use std::io::{Read, Write};

use super::{ModelError, Result};
use crate::binio;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub k: usize,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl KnnModel {
    pub fn fit(k: usize, xs: &[Vec<f64>], ys: &[f64]) -> Result<Self> {
        if k == 0 {
            return Err(ModelError::BadParam("k must be at least 1".into()));
        }
        if xs.is_empty() {
            return Err(ModelError::Empty);
        }
        let p = xs[0].len();
        if let Some(bad) = xs.iter().find(|x| x.len() != p) {
            return Err(ModelError::ShapeMismatch { expected: p, found: bad.len() });
        }
        Ok(KnnModel { k, xs: xs.to_vec(), ys: ys.to_vec() })
    }

    /// Indices of the `min(k, n)` nearest training points ordered by
    /// (distance, index); equal distances prefer the lower index.
    pub fn neighbours(&self, x: &[f64]) -> Result<Vec<usize>> {
        let p = self.xs[0].len();
        if x.len() != p {
            return Err(ModelError::ShapeMismatch { expected: p, found: x.len() });
        }
        let mut d: Vec<(f64, usize)> = self
            .xs
            .iter()
            .enumerate()
            .map(|(i, t)| (t.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let k = self.k.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        Ok(d.into_iter().map(|(_, i)| i).collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let nb = self.neighbours(x)?;
        Ok(nb.iter().map(|&i| self.ys[i]).sum::<f64>() / nb.len() as f64)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u32(w, self.k as u32)?;
        binio::write_u64(w, self.xs.len() as u64)?;
        binio::write_u32(w, self.xs[0].len() as u32)?;
        for (x, &y) in self.xs.iter().zip(&self.ys) {
            binio::write_f64s(w, x)?;
            binio::write_f64(w, y)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let k = binio::read_u32(r)? as usize;
        let n = binio::read_u64(r)? as usize;
        let p = binio::read_u32(r)? as usize;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            xs.push(binio::read_f64s(r, p)?);
            ys.push(binio::read_f64(r)?);
        }
        KnnModel::fit(k, &xs, &ys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..15).map(|i| vec![(i as f64 * 1.3).sin(), (i as f64 * 0.4).cos()]).collect();
        let ys: Vec<f64> = (0..15).map(|i| i as f64 * 0.1).collect();
        (xs, ys)
    }

    #[test]
    fn k1_reproduces_training_targets() {
        let (xs, ys) = data();
        let m = KnnModel::fit(1, &xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(m.predict(x).unwrap(), *y);
        }
    }

    #[test]
    fn k_equal_n_is_global_mean() {
        let (xs, ys) = data();
        let m = KnnModel::fit(xs.len(), &xs, &ys).unwrap();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        for q in [[0.0, 0.0], [5.0, -3.0]] {
            assert!((m.predict(&q).unwrap() - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_prefer_lower_index() {
        let xs = vec![vec![1.0], vec![-1.0], vec![1.0]];
        let m = KnnModel::fit(2, &xs, &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(m.neighbours(&[0.0]).unwrap(), vec![0, 1]);
        assert_eq!(m.predict(&[0.0]).unwrap(), 15.0);
    }

    #[test]
    fn errors() {
        assert!(KnnModel::fit(0, &[vec![1.0]], &[1.0]).is_err());
        assert!(matches!(KnnModel::fit(1, &[], &[]), Err(ModelError::Empty)));
        let m = KnnModel::fit(1, &[vec![1.0]], &[1.0]).unwrap();
        assert!(m.predict(&[1.0, 2.0]).is_err());
    }
}
