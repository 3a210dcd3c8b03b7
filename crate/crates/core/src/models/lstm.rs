//! Single-layer LSTM regressor trained with backpropagation through time.
//!
//! A feature row is read as `steps` time steps of `price_dim` returns (the
//! row is field-major, so step `t` takes element `f * steps + t` for each
//! field `f`). A news vector, when present, enters the input of the final
//! step only or of every step, per [`NewsPlacement`].
//!
//! Gate pre-activations for step `t`:
//! `z = W_p x_t + W_n n [if news at t] + U h_{t-1} + b`, split into input,
//! forget, cell-candidate and output blocks of `hidden` each.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::binio;
use crate::features::FeatureRow;
use crate::optim::{clip_global_norm, sigmoid, Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NewsPlacement {
    #[default]
    Last,
    All,
}

impl std::str::FromStr for NewsPlacement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "last" => Ok(NewsPlacement::Last),
            "all" => Ok(NewsPlacement::All),
            _ => Err(format!("unknown news placement {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmShape {
    pub price_dim: usize,
    pub steps: usize,
    pub news_dim: usize,
    pub hidden: usize,
    pub news_at: NewsPlacement,
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w_price: usize,
    w_news: usize,
    u: usize,
    b: usize,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl LstmShape {
    fn offsets(&self) -> Offsets {
        let g = 4 * self.hidden;
        let w_price = 0;
        let w_news = w_price + g * self.price_dim;
        let u = w_news + g * self.news_dim;
        let b = u + g * self.hidden;
        let head_w = b + g;
        let head_b = head_w + self.hidden;
        Offsets { w_price, w_news, u, b, head_w, head_b, total: head_b + 1 }
    }

    pub fn input_len(&self) -> usize {
        self.price_dim * self.steps + self.news_dim
    }

    pub fn num_params(&self) -> usize {
        self.offsets().total
    }

    fn news_at_step(&self, t: usize) -> bool {
        self.news_dim > 0 && (self.news_at == NewsPlacement::All || t + 1 == self.steps)
    }
}

/// The bare network: parameters in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmNet {
    shape: LstmShape,
    params: Vec<f64>,
}

struct StepCache {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct ForwardCache {
    steps: Vec<StepCache>,
    /// `hs[t]` is the hidden state entering step `t`; `hs[steps]` the final one.
    hs: Vec<Vec<f64>>,
    output: f64,
}

impl LstmNet {
    pub fn zeros(shape: LstmShape) -> Result<Self> {
        if shape.hidden == 0 || shape.steps == 0 || shape.price_dim == 0 {
            return Err(ModelError::BadParam(format!("degenerate LSTM shape {shape:?}")));
        }
        Ok(LstmNet { params: vec![0.0; shape.num_params()], shape })
    }

    /// Uniform(-1/sqrt(hidden), 1/sqrt(hidden)) weights, forget-gate bias 1.
    pub fn new_random(shape: LstmShape, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        let bound = 1.0 / (shape.hidden as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in net.params.iter_mut() {
            *p = rng.gen_range(-bound..bound);
        }
        let off = shape.offsets();
        let h = shape.hidden;
        net.params[off.b + h..off.b + 2 * h].iter_mut().for_each(|b| *b = 1.0);
        Ok(net)
    }

    pub fn shape(&self) -> LstmShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len());
        self.params.copy_from_slice(params);
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.shape.input_len() {
            return Err(ModelError::ShapeMismatch { expected: self.shape.input_len(), found: x.len() });
        }
        Ok(())
    }

    fn forward_cache(&self, x: &[f64]) -> ForwardCache {
        let LstmShape { price_dim, steps, news_dim, hidden: h, .. } = self.shape;
        let off = self.shape.offsets();
        let p = &self.params;
        let news = &x[price_dim * steps..];
        let mut hs = Vec::with_capacity(steps + 1);
        hs.push(vec![0.0; h]);
        let mut c_prev = vec![0.0; h];
        let mut caches = Vec::with_capacity(steps);
        let mut z = vec![0.0; 4 * h];
        for t in 0..steps {
            let h_prev = &hs[t];
            z.copy_from_slice(&p[off.b..off.b + 4 * h]);
            for (r, zr) in z.iter_mut().enumerate() {
                let wp = &p[off.w_price + r * price_dim..off.w_price + (r + 1) * price_dim];
                let mut acc = 0.0;
                for (f, w) in wp.iter().enumerate() {
                    acc += w * x[f * steps + t];
                }
                if self.shape.news_at_step(t) {
                    let wn = &p[off.w_news + r * news_dim..off.w_news + (r + 1) * news_dim];
                    acc += wn.iter().zip(news).map(|(a, b)| a * b).sum::<f64>();
                }
                let u = &p[off.u + r * h..off.u + (r + 1) * h];
                acc += u.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
                *zr += acc;
            }
            let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = z[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
            let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
            let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            hs.push((0..h).map(|k| o[k] * tanh_c[k]).collect());
            c_prev.clone_from(&c);
            caches.push(StepCache { i, f, g, o, c, tanh_c });
        }
        let head = &p[off.head_w..off.head_w + h];
        let output = p[off.head_b] + head.iter().zip(&hs[steps]).map(|(a, b)| a * b).sum::<f64>();
        ForwardCache { steps: caches, hs, output }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(self.forward_cache(x).output)
    }

    /// Accumulates `d_output * d(output)/d(params)` into `grad`.
    fn backward(&self, x: &[f64], cache: &ForwardCache, d_output: f64, grad: &mut [f64]) {
        let LstmShape { price_dim, steps, news_dim, hidden: h, .. } = self.shape;
        let off = self.shape.offsets();
        let p = &self.params;
        let news = &x[price_dim * steps..];

        grad[off.head_b] += d_output;
        let mut dh: Vec<f64> = (0..h).map(|k| p[off.head_w + k] * d_output).collect();
        for (k, hv) in cache.hs[steps].iter().enumerate() {
            grad[off.head_w + k] += d_output * hv;
        }
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..steps).rev() {
            let s = &cache.steps[t];
            let c_prev: &[f64] = if t == 0 { &[] } else { &cache.steps[t - 1].c };
            for k in 0..h {
                let d_o = dh[k] * s.tanh_c[k];
                dc[k] += dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                let cp = if t == 0 { 0.0 } else { c_prev[k] };
                dz[k] = dc[k] * s.g[k] * s.i[k] * (1.0 - s.i[k]);
                dz[h + k] = dc[k] * cp * s.f[k] * (1.0 - s.f[k]);
                dz[2 * h + k] = dc[k] * s.i[k] * (1.0 - s.g[k] * s.g[k]);
                dz[3 * h + k] = d_o * s.o[k] * (1.0 - s.o[k]);
                dc[k] *= s.f[k];
            }
            let h_prev = &cache.hs[t];
            let news_here = self.shape.news_at_step(t);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[off.b + r] += d;
                for f in 0..price_dim {
                    grad[off.w_price + r * price_dim + f] += d * x[f * steps + t];
                }
                if news_here {
                    let row = &mut grad[off.w_news + r * news_dim..off.w_news + (r + 1) * news_dim];
                    row.iter_mut().zip(news).for_each(|(g, n)| *g += d * n);
                }
                let row = &mut grad[off.u + r * h..off.u + (r + 1) * h];
                row.iter_mut().zip(h_prev).for_each(|(g, hp)| *g += d * hp);
            }
            if t > 0 {
                for (k, dhk) in dh.iter_mut().enumerate() {
                    *dhk = (0..4 * h).map(|r| dz[r] * p[off.u + r * h + k]).sum();
                }
            }
        }
    }

    /// Mean squared error over the batch and its gradient.
    pub fn loss_and_gradient(&self, inputs: &[&[f64]], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = inputs.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (x, &y) in inputs.iter().zip(targets) {
            self.check_len(x)?;
            let cache = self.forward_cache(x);
            let err = cache.output - y;
            loss += err * err;
            self.backward(x, &cache, 2.0 * err / n, &mut grad);
        }
        Ok((loss / n, grad))
    }
}

/// Per-column standardization of the price block and of the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub price_mean: Vec<f64>,
    pub price_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Scaler {
    pub fn fit(rows: &[FeatureRow]) -> Self {
        let width = rows[0].x_price.len();
        let (price_mean, price_std) = (0..width).map(|j| mean_std(rows.iter().map(move |r| r.x_price[j]))).unzip();
        let (target_mean, target_std) = mean_std(rows.iter().map(|r| r.y));
        Scaler { price_mean, price_std, target_mean, target_std }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for (j, v) in out.iter_mut().take(self.price_mean.len()).enumerate() {
            *v = (*v - self.price_mean[j]) / self.price_std[j];
        }
        out
    }

    fn scale_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    fn unscale_target(&self, y: f64) -> f64 {
        y * self.target_std + self.target_mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub hidden: usize,
    pub standardize: bool,
    pub news_at: NewsPlacement,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 42,
            clip_norm: 1.0,
            hidden: 64,
            standardize: true,
            news_at: NewsPlacement::Last,
        }
    }
}

/// Network plus the input/target scaling it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmRegressor {
    pub net: LstmNet,
    pub scaler: Option<Scaler>,
}

impl LstmRegressor {
    pub fn input_len(&self) -> usize {
        self.net.shape.input_len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match &self.scaler {
            None => self.net.forward(x),
            Some(s) => Ok(s.unscale_target(self.net.forward(&s.apply(x))?)),
        }
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let s = self.net.shape;
        for v in [s.price_dim, s.steps, s.news_dim, s.hidden] {
            binio::write_u32(w, v as u32)?;
        }
        binio::write_u8(w, matches!(s.news_at, NewsPlacement::All) as u8)?;
        match &self.scaler {
            None => binio::write_u8(w, 0)?,
            Some(sc) => {
                binio::write_u8(w, 1)?;
                binio::write_u32(w, sc.price_mean.len() as u32)?;
                binio::write_f64s(w, &sc.price_mean)?;
                binio::write_f64s(w, &sc.price_std)?;
                binio::write_f64(w, sc.target_mean)?;
                binio::write_f64(w, sc.target_std)?;
            }
        }
        binio::write_f64s(w, &self.net.params)?;
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = binio::read_u32(r)? as usize;
        }
        let news_at = if binio::read_u8(r)? == 1 { NewsPlacement::All } else { NewsPlacement::Last };
        let shape = LstmShape { price_dim: dims[0], steps: dims[1], news_dim: dims[2], hidden: dims[3], news_at };
        let scaler = match binio::read_u8(r)? {
            0 => None,
            1 => {
                let n = binio::read_u32(r)? as usize;
                if n > 1 << 20 {
                    return Err(ModelError::BadFile(format!("scaler width {n}")));
                }
                Some(Scaler {
                    price_mean: binio::read_f64s(r, n)?,
                    price_std: binio::read_f64s(r, n)?,
                    target_mean: binio::read_f64(r)?,
                    target_std: binio::read_f64(r)?,
                })
            }
            t => return Err(ModelError::BadFile(format!("scaler tag {t}"))),
        };
        let mut net = LstmNet::zeros(shape)?;
        net.params = binio::read_f64s(r, shape.num_params())?;
        Ok(LstmRegressor { net, scaler })
    }
}

/// Per-epoch MSE (in return units) on the training rows and on held-out rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub train: Vec<f64>,
    pub test: Vec<f64>,
}

fn mse(model: &LstmRegressor, rows: &[FeatureRow], inputs: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (r, x) in rows.iter().zip(inputs) {
        let e = model.predict(x)? - r.y;
        total += e * e;
    }
    Ok(total / rows.len().max(1) as f64)
}

/// Shape implied by a feature row layout with `window` sessions of four fields.
pub fn shape_for(rows: &[FeatureRow], hidden: usize, news_at: NewsPlacement) -> Result<LstmShape> {
    let first = rows.first().ok_or(ModelError::Empty)?;
    let price_len = first.x_price.len();
    if price_len == 0 || price_len % 4 != 0 {
        return Err(ModelError::BadParam(format!("price block of length {price_len} is not 4 x window")));
    }
    Ok(LstmShape {
        price_dim: 4,
        steps: price_len / 4,
        news_dim: first.x_news.as_ref().map_or(0, Vec::len),
        hidden,
        news_at,
    })
}

/// Mini-batch Adam with gradient clipping. `heldout` may be empty.
pub fn train_lstm(train: &[FeatureRow], heldout: &[FeatureRow], cfg: &TrainConfig) -> Result<(LstmRegressor, LossCurve)> {
    if train.is_empty() {
        return Err(ModelError::Empty);
    }
    if cfg.epochs == 0 {
        return Err(ModelError::BadParam("epochs must be at least 1".into()));
    }
    if cfg.learning_rate <= 0.0 || !cfg.learning_rate.is_finite() {
        return Err(ModelError::BadParam("learning rate must be positive".into()));
    }
    let shape = shape_for(train, cfg.hidden, cfg.news_at)?;
    let flat = |rows: &[FeatureRow]| -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|r| {
                let x = r.flat_features();
                if x.len() != shape.input_len() {
                    return Err(ModelError::ShapeMismatch { expected: shape.input_len(), found: x.len() });
                }
                Ok(x)
            })
            .collect()
    };
    let train_x = flat(train)?;
    let held_x = flat(heldout)?;

    let scaler = cfg.standardize.then(|| Scaler::fit(train));
    let (scaled_x, scaled_y): (Vec<Vec<f64>>, Vec<f64>) = match &scaler {
        Some(s) => (train_x.iter().map(|x| s.apply(x)).collect(), train.iter().map(|r| s.scale_target(r.y)).collect()),
        None => (train_x.clone(), train.iter().map(|r| r.y).collect()),
    };

    let mut model = LstmRegressor { net: LstmNet::new_random(shape, cfg.seed)?, scaler };
    let mut opt = Adam::new(AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() }, shape.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = LossCurve::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (bi, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| scaled_x[i].as_slice()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| scaled_y[i]).collect();
            let (loss, mut grad) = model.net.loss_and_gradient(&xs, &ys)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFiniteLoss { epoch, batch: bi });
            }
            clip_global_norm(&mut grad, cfg.clip_norm);
            opt.step(&mut model.net.params, &grad);
        }
        curve.train.push(mse(&model, train, &train_x)?);
        if !heldout.is_empty() {
            curve.test.push(mse(&model, heldout, &held_x)?);
        }
    }
    Ok((model, curve))
}

/// MSE of `model` over `rows`, in return units.
pub fn evaluate_mse(model: &LstmRegressor, rows: &[FeatureRow]) -> Result<f64> {
    let xs: Vec<Vec<f64>> = rows.iter().map(FeatureRow::flat_features).collect();
    mse(model, rows, &xs)
}
