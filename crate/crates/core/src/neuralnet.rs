//! A one-layer text CNN over word embeddings.
//!
//! Architecture: a single convolution (filters spanning `filter_height`
//! consecutive word vectors) with CReLU, 1-max pooling over positions, three
//! fully connected CReLU layers (dropout on the first one's output) and a
//! softmax layer. Gradients are derived by hand; see [`CnnModel::backward`].
//!
//! CReLU(x) = [max(0, x), max(0, −x)], so every activated layer doubles its
//! width: `n_filters` filters pool into `2·n_filters` values and the last
//! fully connected layer of width `w` feeds `2·w` values to the softmax.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub seq_len: usize,
    pub embed_dim: usize,
    pub n_filters: usize,
    pub filter_height: usize,
    pub fc_sizes: [usize; 3],
    pub dropout_rate: f64,
    pub n_classes: usize,
    pub seed: u64,
}

impl CnnConfig {
    /// 100 tokens, 100 filters of height 2, FC widths 64/48/25 (a 50-wide
    /// input to the softmax after CReLU), dropout 0.5, two classes.
    pub fn new(embed_dim: usize) -> Self {
        CnnConfig {
            seq_len: 100,
            embed_dim,
            n_filters: 100,
            filter_height: 2,
            fc_sizes: [64, 48, 25],
            dropout_rate: 0.5,
            n_classes: 2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_height < 1 || self.seq_len < self.filter_height {
            return Err(Error::Argument(format!(
                "seq_len {} must be at least filter_height {} (>= 1)",
                self.seq_len, self.filter_height
            )));
        }
        if self.embed_dim < 1 || self.n_filters < 1 || self.fc_sizes.iter().any(|&s| s < 1) {
            return Err(Error::Argument("layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Argument(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Argument("need at least two classes".into()));
        }
        Ok(())
    }

    pub fn positions(&self) -> usize {
        self.seq_len - self.filter_height + 1
    }
}

/// A document as a `seq_len × dim` matrix of word vectors, zero-padded.
#[derive(Debug, Clone, PartialEq)]
pub struct DocMatrix {
    rows: usize,
    dim: usize,
    /// Rows at or past this index are padding.
    len: usize,
    data: Vec<f64>,
}

impl DocMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        DocMatrix {
            rows,
            dim,
            len: 0,
            data: vec![0.0; rows * dim],
        }
    }

    /// Builds from explicit rows; anything past `rows.len()` is padding.
    pub fn from_rows(seq_len: usize, dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() > seq_len {
            return Err(Error::Shape(format!(
                "{} rows exceed seq_len {seq_len}",
                rows.len()
            )));
        }
        let mut m = DocMatrix::zeros(seq_len, dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Shape(format!(
                    "row {i} has {} values, expected {dim}",
                    r.len()
                )));
            }
            m.data[i * dim..(i + 1) * dim].copy_from_slice(r);
        }
        m.len = rows.len();
        Ok(m)
    }

    /// First `seq_len` tokens as word vectors; unknown tokens map to zero rows.
    pub fn from_tokens<S: AsRef<str>>(
        tokens: &[S],
        table: &EmbeddingTable,
        seq_len: usize,
    ) -> Self {
        let dim = table.dim();
        let mut m = DocMatrix::zeros(seq_len, dim);
        let n = tokens.len().min(seq_len);
        for (i, t) in tokens.iter().take(n).enumerate() {
            if let Some(v) = table.lookup(t.as_ref()) {
                m.data[i * dim..(i + 1) * dim].copy_from_slice(v);
            }
        }
        m.len = n;
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Number of leading rows that came from real tokens.
    pub fn content_rows(&self) -> usize {
        self.len
    }
}

/// Fully connected layer, `weights` row-major `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (n_in as f64).sqrt();
        let mut d = Dense::zeros(n_in, n_out);
        for w in &mut d.weights {
            *w = rng.gen_range(-limit..limit);
        }
        d
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.n_in..(o + 1) * self.n_in]
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| self.bias[o] + dot(self.row(o), x))
            .collect()
    }

    /// Accumulates weight/bias gradients for `dz` and returns dL/dx.
    fn backward_into(&self, x: &[f64], dz: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.n_in];
        for (o, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let gw = &mut grad.weights[o * self.n_in..(o + 1) * self.n_in];
            for ((gwi, xi), (dxi, wi)) in gw.iter_mut().zip(x).zip(dx.iter_mut().zip(self.row(o))) {
                *gwi += g * xi;
                *dxi += g * wi;
            }
        }
        dx
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn crelu(z: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * z.len());
    out.extend(z.iter().map(|&x| x.max(0.0)));
    out.extend(z.iter().map(|&x| (-x).max(0.0)));
    out
}

/// dL/dz from dL/d(crelu(z)).
fn crelu_backward(z: &[f64], dout: &[f64]) -> Vec<f64> {
    let n = z.len();
    (0..n)
        .map(|i| {
            if z[i] > 0.0 {
                dout[i]
            } else if z[i] < 0.0 {
                -dout[n + i]
            } else {
                0.0
            }
        })
        .collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub config: CnnConfig,
    /// `n_filters × (filter_height · embed_dim)`.
    pub conv: Dense,
    pub fc: [Dense; 3],
    pub out: Dense,
    /// Bumped on every parameter update; caches remember the value they saw.
    #[serde(skip)]
    generation: u64,
}

/// Activations saved by [`CnnModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    train_mode: bool,
    input: DocMatrix,
    /// positions × n_filters
    conv_pre: Vec<f64>,
    pool_argmax: Vec<usize>,
    pooled: Vec<f64>,
    z: [Vec<f64>; 3],
    /// Layer outputs after CReLU (the first after dropout).
    a: [Vec<f64>; 3],
    mask: Option<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl ForwardCache {
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    /// Sign pattern of every pre-activation plus pooling argmaxes. Two
    /// forward passes with equal signatures lie on the same linear piece.
    pub fn activation_signature(&self) -> Vec<i64> {
        let sign = |x: &f64| {
            if *x > 0.0 {
                1
            } else if *x < 0.0 {
                -1
            } else {
                0
            }
        };
        let mut s: Vec<i64> = self.conv_pre.iter().map(sign).collect();
        s.extend(self.pool_argmax.iter().map(|&i| i as i64));
        for z in &self.z {
            s.extend(z.iter().map(sign));
        }
        s
    }
}

impl CnnModel {
    pub fn new(config: CnnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let conv = Dense::init(
            config.filter_height * config.embed_dim,
            config.n_filters,
            &mut rng,
        );
        let [f1, f2, f3] = config.fc_sizes;
        let fc = [
            Dense::init(2 * config.n_filters, f1, &mut rng),
            Dense::init(2 * f1, f2, &mut rng),
            Dense::init(2 * f2, f3, &mut rng),
        ];
        let out = Dense::init(2 * f3, config.n_classes, &mut rng);
        Ok(CnnModel {
            config,
            conv,
            fc,
            out,
            generation: 0,
        })
    }

    /// A model with every parameter set to zero.
    pub fn zeros(config: CnnConfig) -> Result<Self> {
        let mut m = CnnModel::new(config)?;
        m.for_each_param_mut(|_, _, p| p.iter_mut().for_each(|x| *x = 0.0));
        Ok(m)
    }

    fn layers(&self) -> [&Dense; 5] {
        [&self.conv, &self.fc[0], &self.fc[1], &self.fc[2], &self.out]
    }

    fn layers_mut(&mut self) -> [&mut Dense; 5] {
        let [a, b, c] = &mut self.fc;
        [&mut self.conv, a, b, c, &mut self.out]
    }

    pub const LAYER_NAMES: [&'static str; 5] = ["conv", "fc1", "fc2", "fc3", "out"];

    /// Visits every parameter tensor as (name, is_weight, values).
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(String, bool, &mut [f64])) {
        for (name, layer) in Self::LAYER_NAMES.iter().zip(self.layers_mut()) {
            f(format!("{name}.weight"), true, &mut layer.weights);
            f(format!("{name}.bias"), false, &mut layer.bias);
        }
        self.generation += 1;
    }

    pub fn for_each_param(&self, mut f: impl FnMut(String, bool, &[f64])) {
        for (name, layer) in Self::LAYER_NAMES.iter().zip(self.layers()) {
            f(format!("{name}.weight"), true, &layer.weights);
            f(format!("{name}.bias"), false, &layer.bias);
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, doc: &DocMatrix) -> Result<()> {
        if doc.rows != self.config.seq_len || doc.dim != self.config.embed_dim {
            return Err(Error::Shape(format!(
                "document is {}×{}, model expects {}×{}",
                doc.rows, doc.dim, self.config.seq_len, self.config.embed_dim
            )));
        }
        if doc.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("document matrix".into()));
        }
        Ok(())
    }

    /// Class probabilities plus the activations needed by [`Self::backward`].
    /// In train mode the dropout mask is drawn from `rng`; otherwise `rng`
    /// is untouched.
    pub fn forward<R: Rng>(
        &self,
        doc: &DocMatrix,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(doc)?;
        let cfg = &self.config;
        let (nf, dim, h) = (cfg.n_filters, cfg.embed_dim, cfg.filter_height);
        let positions = cfg.positions();
        let window = h * dim;

        // Windows lying entirely in the zero padding reduce to the bias.
        let live = (doc.len + h).saturating_sub(1).min(positions);
        let mut conv_pre = Vec::with_capacity(positions * nf);
        for p in 0..positions {
            if p < live {
                let x = &doc.data[p * dim..p * dim + window];
                conv_pre.extend((0..nf).map(|f| self.conv.bias[f] + dot(self.conv.row(f), x)));
            } else {
                conv_pre.extend_from_slice(&self.conv.bias);
            }
        }

        let mut pooled = vec![0.0; 2 * nf];
        let mut pool_argmax = vec![0usize; 2 * nf];
        for f in 0..nf {
            let (mut best_pos, mut best_neg) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for p in 0..positions {
                let x = conv_pre[p * nf + f];
                if x.max(0.0) > best_pos {
                    best_pos = x.max(0.0);
                    pool_argmax[f] = p;
                }
                if (-x).max(0.0) > best_neg {
                    best_neg = (-x).max(0.0);
                    pool_argmax[nf + f] = p;
                }
            }
            pooled[f] = best_pos;
            pooled[nf + f] = best_neg;
        }

        let z0 = self.fc[0].forward(&pooled);
        let mut a0 = crelu(&z0);
        let mask = if train_mode && cfg.dropout_rate > 0.0 {
            let keep = 1.0 / (1.0 - cfg.dropout_rate);
            let m: Vec<f64> = (0..a0.len())
                .map(|_| {
                    if rng.gen::<f64>() < cfg.dropout_rate {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect();
            a0.iter_mut().zip(&m).for_each(|(a, k)| *a *= k);
            Some(m)
        } else {
            None
        };
        let z1 = self.fc[1].forward(&a0);
        let a1 = crelu(&z1);
        let z2 = self.fc[2].forward(&a1);
        let a2 = crelu(&z2);
        let logits = self.out.forward(&a2);
        let probs = softmax(&logits);

        let cache = ForwardCache {
            generation: self.generation,
            train_mode,
            input: doc.clone(),
            conv_pre,
            pool_argmax,
            pooled,
            z: [z0, z1, z2],
            a: [a0, a1, a2],
            mask,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    /// Positive-class (index 1) probability in inference mode.
    pub fn predict_proba(&self, doc: &DocMatrix) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (probs, _) = self.forward(doc, false, &mut rng)?;
        Ok(probs[1])
    }

    /// Cross-entropy gradients of every parameter for the cached forward
    /// pass. Max pooling routes the gradient to the winning position only;
    /// CReLU routes it to whichever half was active.
    pub fn backward(&self, cache: &ForwardCache, target: usize) -> Result<CnnModel> {
        if cache.generation != self.generation {
            return Err(Error::Validation(
                "forward cache is stale: model changed since the forward pass".into(),
            ));
        }
        if !cache.train_mode {
            return Err(Error::Validation(
                "backward needs a train-mode forward cache".into(),
            ));
        }
        if cache.input.rows != self.config.seq_len || cache.input.dim != self.config.embed_dim {
            return Err(Error::Shape(
                "forward cache does not match the model".into(),
            ));
        }
        if target >= self.config.n_classes {
            return Err(Error::Argument(format!(
                "target class {target} out of range"
            )));
        }
        let mut grad = CnnModel {
            config: self.config.clone(),
            conv: Dense::zeros(self.conv.n_in, self.conv.n_out),
            fc: [
                Dense::zeros(self.fc[0].n_in, self.fc[0].n_out),
                Dense::zeros(self.fc[1].n_in, self.fc[1].n_out),
                Dense::zeros(self.fc[2].n_in, self.fc[2].n_out),
            ],
            out: Dense::zeros(self.out.n_in, self.out.n_out),
            generation: 0,
        };

        let mut dlogits = cache.probs.clone();
        dlogits[target] -= 1.0;
        let da2 = self.out.backward_into(&cache.a[2], &dlogits, &mut grad.out);
        let dz2 = crelu_backward(&cache.z[2], &da2);
        let da1 = self.fc[2].backward_into(&cache.a[1], &dz2, &mut grad.fc[2]);
        let dz1 = crelu_backward(&cache.z[1], &da1);
        let mut da0 = self.fc[1].backward_into(&cache.a[0], &dz1, &mut grad.fc[1]);
        if let Some(mask) = &cache.mask {
            da0.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        let dz0 = crelu_backward(&cache.z[0], &da0);
        let dpooled = self.fc[0].backward_into(&cache.pooled, &dz0, &mut grad.fc[0]);

        let nf = self.config.n_filters;
        let dim = self.config.embed_dim;
        let window = self.config.filter_height * dim;
        for (c, &g) in dpooled.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let f = c % nf;
            let p = cache.pool_argmax[c];
            let x = cache.conv_pre[p * nf + f];
            let dconv = if c < nf {
                if x > 0.0 {
                    g
                } else {
                    0.0
                }
            } else if x < 0.0 {
                -g
            } else {
                0.0
            };
            if dconv == 0.0 {
                continue;
            }
            grad.conv.bias[f] += dconv;
            let input = &cache.input.data[p * dim..p * dim + window];
            let gw = &mut grad.conv.weights[f * window..(f + 1) * window];
            gw.iter_mut().zip(input).for_each(|(w, x)| *w += dconv * x);
        }
        Ok(grad)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&Checkpoint::from_model(self))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.into_model()
    }
}

pub fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(1e-300).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Portable JSON container: config echo plus named tensors with shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: CnnConfig,
    pub tensors: Vec<Tensor>,
}

const CHECKPOINT_FORMAT: &str = "earlyrisk-cnn-v1";

impl Checkpoint {
    pub fn from_model(m: &CnnModel) -> Self {
        let mut tensors = Vec::new();
        for (name, layer) in CnnModel::LAYER_NAMES.iter().zip(m.layers()) {
            tensors.push(Tensor {
                name: format!("{name}.weight"),
                shape: vec![layer.n_out, layer.n_in],
                data: layer.weights.clone(),
            });
            tensors.push(Tensor {
                name: format!("{name}.bias"),
                shape: vec![layer.n_out],
                data: layer.bias.clone(),
            });
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: m.config.clone(),
            tensors,
        }
    }

    pub fn into_model(self) -> Result<CnnModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!(
                "unknown checkpoint format {:?}",
                self.format
            )));
        }
        let mut model = CnnModel::zeros(self.config)?;
        let mut err = None;
        let tensors = self.tensors;
        model.for_each_param_mut(|name, _, dst| {
            let Some(t) = tensors.iter().find(|t| t.name == name) else {
                err.get_or_insert(Error::Validation(format!("checkpoint lacks tensor {name}")));
                return;
            };
            let numel: usize = t.shape.iter().product();
            if t.data.len() != dst.len() || numel != dst.len() {
                err.get_or_insert(Error::Shape(format!(
                    "tensor {name} has {} values, expected {}",
                    t.data.len(),
                    dst.len()
                )));
                return;
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                err.get_or_insert(Error::NonFinite(format!("tensor {name}")));
                return;
            }
            dst.copy_from_slice(&t.data);
        });
        match err {
            Some(e) => Err(e),
            None => Ok(model),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    PlainSgd,
    AdaptiveMoment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// L2 penalty on weights (biases are not penalized).
    pub l2_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            optimizer: Optimizer::AdaptiveMoment,
            l2_weight: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        if self.l2_weight < 0.0 {
            return Err(Error::Argument("l2_weight must be non-negative".into()));
        }
        Ok(())
    }
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

fn flatten(model: &CnnModel) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    model.for_each_param(|_, _, p| out.push(p.to_vec()));
    out
}

fn apply_update(
    model: &mut CnnModel,
    grad: &[Vec<f64>],
    cfg: &TrainConfig,
    adam: &mut Option<AdamState>,
) {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    if let Some(s) = adam.as_mut() {
        s.t += 1;
    }
    let mut idx = 0;
    model.for_each_param_mut(|_, is_weight, p| {
        let g = &grad[idx];
        for j in 0..p.len() {
            let gj = g[j] + if is_weight { cfg.l2_weight * p[j] } else { 0.0 };
            match adam.as_mut() {
                None => p[j] -= cfg.learning_rate * gj,
                Some(s) => {
                    let m = &mut s.m[idx][j];
                    let v = &mut s.v[idx][j];
                    *m = B1 * *m + (1.0 - B1) * gj;
                    *v = B2 * *v + (1.0 - B2) * gj * gj;
                    let mh = *m / (1.0 - B1.powi(s.t));
                    let vh = *v / (1.0 - B2.powi(s.t));
                    p[j] -= cfg.learning_rate * mh / (vh.sqrt() + EPS);
                }
            }
        }
        idx += 1;
    });
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CnnModel,
    /// Mean cross-entropy of the training examples seen in each epoch.
    pub loss_curve: Vec<f64>,
}

/// Mini-batch training over examples fetched by index. Shuffling and
/// dropout masks come from `cfg.seed`, and batch gradients are summed in
/// example order, so runs are reproducible.
pub fn train_with<F>(
    mut model: CnnModel,
    n_examples: usize,
    fetch: F,
    cfg: &TrainConfig,
) -> Result<TrainOutcome>
where
    F: Fn(usize) -> Result<(DocMatrix, usize)>,
{
    cfg.validate()?;
    if n_examples == 0 {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut adam = match cfg.optimizer {
        Optimizer::PlainSgd => None,
        Optimizer::AdaptiveMoment => {
            let zeros: Vec<Vec<f64>> = flatten(&model).iter().map(|p| vec![0.0; p.len()]).collect();
            Some(AdamState {
                m: zeros.clone(),
                v: zeros,
                t: 0,
            })
        }
    };
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Vec<f64>>> = None;
            for &i in batch {
                let (doc, label) = fetch(i)?;
                if label >= model.config.n_classes {
                    return Err(Error::Argument(format!("label {label} out of range")));
                }
                let (probs, cache) = model.forward(&doc, true, &mut rng)?;
                let loss = cross_entropy(&probs, label);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, loss });
                }
                epoch_loss += loss;
                let g = flatten(&model.backward(&cache, label)?);
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => a
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(x, y)| x.iter_mut().zip(y).for_each(|(p, q)| *p += q)),
                }
            }
            let mut g = acc.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            g.iter_mut()
                .for_each(|t| t.iter_mut().for_each(|x| *x *= scale));
            apply_update(&mut model, &g, cfg, &mut adam);
        }
        let mean = epoch_loss / n_examples as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        loss_curve.push(mean);
    }
    Ok(TrainOutcome { model, loss_curve })
}

pub fn train(
    model: CnnModel,
    dataset: &[(DocMatrix, usize)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, dataset.len(), |i| Ok(dataset[i].clone()), cfg)
}

/// Percentile with linear interpolation between the sorted values at
/// rank `q·(N−1)`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::NoContent("percentile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Argument(format!("quantile {q} not in [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = q * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(v[lo] + (v[hi] - v[lo]) * frac)
}

pub const USER_PERCENTILE: f64 = 0.98;

/// User-level positive probability: the 98th percentile of the
/// per-document probabilities.
pub fn predict_user(model: &CnnModel, documents: &[DocMatrix]) -> Result<f64> {
    if documents.is_empty() {
        return Err(Error::NoContent("user has no usable documents".into()));
    }
    let probs = documents
        .par_iter()
        .map(|d| model.predict_proba(d))
        .collect::<Result<Vec<f64>>>()?;
    percentile(&probs, USER_PERCENTILE)
}

/// Writes `epoch,loss` rows.
pub fn write_loss_curve<W: std::io::Write>(writer: W, curve: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "loss"])?;
    for (i, l) in curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<loss curve>", e))?;
    Ok(())
}
