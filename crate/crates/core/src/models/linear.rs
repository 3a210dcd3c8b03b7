//! Ordinary least squares with a fixed tiny ridge, solved on centered data
//! through the normal equations and a Cholesky factorization.

use std::io::{Read, Write};

use super::{ModelError, Result};
use crate::binio;

pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

/// In-place Cholesky of a symmetric positive-definite row-major `n x n` matrix;
/// the lower triangle receives `L`.
fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(ModelError::Singular);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

impl LinearModel {
    /// Solves `(Xc'Xc + ridge I) beta = Xc'yc`; the intercept is unpenalized.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], ridge: f64) -> Result<Self> {
        let n = xs.len();
        if n == 0 {
            return Err(ModelError::Empty);
        }
        let p = xs[0].len();
        if let Some(bad) = xs.iter().find(|x| x.len() != p) {
            return Err(ModelError::ShapeMismatch { expected: p, found: bad.len() });
        }
        let x_mean: Vec<f64> = (0..p).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let mut gram = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        let mut centered = vec![0.0; p];
        for (x, &y) in xs.iter().zip(ys) {
            for j in 0..p {
                centered[j] = x[j] - x_mean[j];
            }
            let yc = y - y_mean;
            for i in 0..p {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                rhs[i] += ci * yc;
                for j in 0..=i {
                    gram[i * p + j] += ci * centered[j];
                }
            }
        }
        for i in 0..p {
            gram[i * p + i] += ridge;
        }
        cholesky(&mut gram, p)?;
        cholesky_solve(&gram, p, &mut rhs);
        let intercept = y_mean - rhs.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
        Ok(LinearModel { coef: rhs, intercept })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coef.len() {
            return Err(ModelError::ShapeMismatch { expected: self.coef.len(), found: x.len() });
        }
        Ok(self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u32(w, self.coef.len() as u32)?;
        binio::write_f64(w, self.intercept)?;
        binio::write_f64s(w, &self.coef)?;
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let p = binio::read_u32(r)? as usize;
        let intercept = binio::read_f64(r)?;
        Ok(LinearModel { coef: binio::read_f64s(r, p)?, intercept })
    }
}
