//! Logistic regression on metadata vectors, user-level predictors over
//! message prefixes, and mean-probability late fusion.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Message, UserRecord};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metadata::{MetadataConfig, MetadataExtractor, Standardizer, FEATURE_NAMES};
use crate::neuralnet::{predict_user, CnnModel, DocMatrix};
use crate::textproc::Tokenizer;

/// Hex SHA-256 of the comma-joined feature names, stored with a model so
/// that vectors built in a different column order are rejected.
pub fn feature_fingerprint<S: AsRef<str>>(names: &[S]) -> String {
    let joined = names
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(",");
    hex::encode(Sha256::digest(joined.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_fingerprint: Option<String>,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        LogisticModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            feature_fingerprint: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn with_fingerprint(mut self, names: &[&str]) -> Self {
        self.feature_fingerprint = Some(feature_fingerprint(names));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_weight: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            learning_rate: 0.1,
            epochs: 1000,
            l2_weight: 1e-4,
        }
    }
}

impl LogisticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_weight.is_finite() && self.l2_weight >= 0.0) {
            return Err(Error::Argument(format!(
                "l2 weight must be non-negative, got {}",
                self.l2_weight
            )));
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGradient {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Mean cross-entropy plus `l2/2 · ‖w‖²` and its gradient. The bias is
/// not regularized.
pub fn logistic_loss_and_gradient(
    model: &LogisticModel,
    features: &[Vec<f64>],
    labels: &[bool],
    l2_weight: f64,
) -> Result<LossAndGradient> {
    check_training_shape(features, labels, model.dim())?;
    let n = features.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; model.dim()];
    let mut gb = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let z = dot(&model.weights, x) + model.bias;
        // -[y ln σ(z) + (1-y) ln(1-σ(z))] = softplus(z) - y·z
        loss += softplus(z) - if y { z } else { 0.0 };
        let r = sigmoid(z) - if y { 1.0 } else { 0.0 };
        for (g, xi) in gw.iter_mut().zip(x) {
            *g += r * xi;
        }
        gb += r;
    }
    loss /= n;
    let norm: f64 = model.weights.iter().map(|w| w * w).sum();
    loss += 0.5 * l2_weight * norm;
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g = *g / n + l2_weight * w;
    }
    Ok(LossAndGradient {
        loss,
        weights: gw,
        bias: gb / n,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_training_shape(features: &[Vec<f64>], labels: &[bool], dim: usize) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Validation("no training examples".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    for (i, row) in features.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::Shape(format!(
                "row {i} has {} features, expected {dim}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("training row {i}")));
        }
    }
    Ok(())
}

/// Full-batch gradient descent from zero initialization.
pub fn train_logistic(
    features: &[Vec<f64>],
    labels: &[bool],
    cfg: &LogisticConfig,
) -> Result<LogisticModel> {
    cfg.validate()?;
    let dim = features.first().map_or(0, Vec::len);
    check_training_shape(features, labels, dim)?;
    if !labels.iter().any(|&y| y) || labels.iter().all(|&y| y) {
        return Err(Error::Validation(
            "training labels contain a single class".into(),
        ));
    }
    let mut model = LogisticModel::zeros(dim);
    for epoch in 0..cfg.epochs {
        let g = logistic_loss_and_gradient(&model, features, labels, cfg.l2_weight)?;
        if !g.loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: g.loss,
            });
        }
        for (w, gw) in model.weights.iter_mut().zip(&g.weights) {
            *w -= cfg.learning_rate * gw;
        }
        model.bias -= cfg.learning_rate * g.bias;
    }
    Ok(model)
}

pub fn predict_logistic(model: &LogisticModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::Shape(format!(
            "model expects {} features, got {}",
            model.dim(),
            x.len()
        )));
    }
    let z = dot(&model.weights, x) + model.bias;
    if !z.is_finite() {
        return Err(Error::NonFinite("logistic margin".into()));
    }
    Ok(sigmoid(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionSource {
    Metadata,
    Cnn,
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPrediction {
    pub user_id: String,
    pub probability: f64,
    pub source: PredictionSource,
}

impl UserPrediction {
    pub fn new(
        user_id: impl Into<String>,
        probability: f64,
        source: PredictionSource,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::Validation(format!(
                "probability {probability} outside [0, 1]"
            )));
        }
        Ok(UserPrediction {
            user_id: user_id.into(),
            probability,
            source,
        })
    }
}

/// Uncalibrated mean of two predictions for the same user.
pub fn fuse(a: &UserPrediction, b: &UserPrediction) -> Result<UserPrediction> {
    if a.user_id != b.user_id {
        return Err(Error::Validation(format!(
            "cannot fuse predictions for different users ({} vs {})",
            a.user_id, b.user_id
        )));
    }
    UserPrediction::new(
        a.user_id.clone(),
        0.5 * (a.probability + b.probability),
        PredictionSource::Ensemble,
    )
}

/// Scores a user from the messages released so far. `Ok(None)` means the
/// prefix holds nothing the predictor can use yet.
pub trait Predictor: Sync {
    fn predict(&self, user: &UserRecord, prefix: &[Message]) -> Result<Option<f64>>;

    fn source(&self) -> PredictionSource;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, user: &UserRecord, prefix: &[Message]) -> Result<Option<f64>> {
        (**self).predict(user, prefix)
    }

    fn source(&self) -> PredictionSource {
        (**self).source()
    }
}

impl<P: Predictor + ?Sized + Send> Predictor for Box<P> {
    fn predict(&self, user: &UserRecord, prefix: &[Message]) -> Result<Option<f64>> {
        (**self).predict(user, prefix)
    }

    fn source(&self) -> PredictionSource {
        (**self).source()
    }
}

fn has_content(prefix: &[Message]) -> bool {
    prefix.iter().any(|m| !m.is_empty())
}

/// Returns the same probability for every user with content.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f64);

impl Predictor for ConstantPredictor {
    fn predict(&self, _user: &UserRecord, prefix: &[Message]) -> Result<Option<f64>> {
        Ok(has_content(prefix).then_some(self.0))
    }

    fn source(&self) -> PredictionSource {
        PredictionSource::Metadata
    }
}

/// Reads the ground-truth label: 1 for positives, 0 for negatives.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelOracle;

impl Predictor for LabelOracle {
    fn predict(&self, user: &UserRecord, prefix: &[Message]) -> Result<Option<f64>> {
        if !has_content(prefix) {
            return Ok(None);
        }
        Ok(Some(if user.require_label()?.is_positive() {
            1.0
        } else {
            0.0
        }))
    }

    fn source(&self) -> PredictionSource {
        PredictionSource::Metadata
    }
}

/// A trained metadata classifier: standardizer plus logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub metadata: MetadataConfig,
    pub standardizer: Standardizer,
    pub logistic: LogisticModel,
}

impl MetaModel {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: MetaModel = serde_json::from_str(&text)?;
        m.check_fingerprint()?;
        Ok(m)
    }

    fn check_fingerprint(&self) -> Result<()> {
        match &self.logistic.feature_fingerprint {
            Some(fp) if *fp != feature_fingerprint(&FEATURE_NAMES) => Err(Error::Validation(
                "metadata model was trained on a different feature order".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Extracts metadata for every training user, fits the standardizer and
/// trains the logistic regression.
pub fn train_metadata_model(
    extractor: &MetadataExtractor,
    users: &[UserRecord],
    cfg: &LogisticConfig,
) -> Result<MetaModel> {
    let labels = users
        .iter()
        .map(|u| u.require_label().map(|l| l.is_positive()))
        .collect::<Result<Vec<_>>>()?;
    let vectors = extractor.extract_all(users);
    let standardizer = Standardizer::fit(&vectors)?;
    let rows = vectors
        .iter()
        .map(|v| standardizer.apply(v.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let logistic = train_logistic(&rows, &labels, cfg)?.with_fingerprint(&FEATURE_NAMES);
    Ok(MetaModel {
        metadata: extractor.config(),
        standardizer,
        logistic,
    })
}

/// Recomputes metadata over each prefix and scores it.
pub struct MetadataPredictor {
    extractor: MetadataExtractor,
    model: MetaModel,
}

impl MetadataPredictor {
    pub fn new(extractor: MetadataExtractor, model: MetaModel) -> Result<Self> {
        model.check_fingerprint()?;
        Ok(MetadataPredictor {
            extractor: extractor.with_config(model.metadata),
            model,
        })
    }

    pub fn model(&self) -> &MetaModel {
        &self.model
    }
}

impl Predictor for MetadataPredictor {
    fn predict(&self, _user: &UserRecord, prefix: &[Message]) -> Result<Option<f64>> {
        if !has_content(prefix) {
            return Ok(None);
        }
        let v = self.extractor.extract_messages(prefix);
        let x = self.model.standardizer.apply(v.as_slice())?;
        predict_logistic(&self.model.logistic, &x).map(Some)
    }

    fn source(&self) -> PredictionSource {
        PredictionSource::Metadata
    }
}

/// Token sequence fed to the network for one message.
pub fn message_tokens(tokenizer: &Tokenizer, message: &Message) -> Vec<String> {
    let text = format!("{}\n{}", message.title, message.body);
    tokenizer.tokenize(&text).tokens().to_vec()
}

pub fn message_matrix(
    tokenizer: &Tokenizer,
    table: &EmbeddingTable,
    message: &Message,
    seq_len: usize,
) -> DocMatrix {
    DocMatrix::from_tokens(&message_tokens(tokenizer, message), table, seq_len)
}

/// Scores every non-empty message with the CNN and aggregates with the
/// user-level percentile.
pub struct CnnPredictor {
    model: CnnModel,
    table: EmbeddingTable,
    tokenizer: Tokenizer,
}

impl CnnPredictor {
    pub fn new(model: CnnModel, table: EmbeddingTable, tokenizer: Tokenizer) -> Result<Self> {
        if model.config.embed_dim != table.dim() {
            return Err(Error::Shape(format!(
                "network expects {}-dimensional embeddings, table has {}",
                model.config.embed_dim,
                table.dim()
            )));
        }
        Ok(CnnPredictor {
            model,
            table,
            tokenizer,
        })
    }
}

impl Predictor for CnnPredictor {
    fn predict(&self, _user: &UserRecord, prefix: &[Message]) -> Result<Option<f64>> {
        let docs: Vec<DocMatrix> = prefix
            .iter()
            .filter(|m| !m.is_empty())
            .map(|m| message_matrix(&self.tokenizer, &self.table, m, self.model.config.seq_len))
            .collect();
        if docs.is_empty() {
            return Ok(None);
        }
        predict_user(&self.model, &docs).map(Some)
    }

    fn source(&self) -> PredictionSource {
        PredictionSource::Cnn
    }
}

/// Late fusion of two predictors. When only one has content the other's
/// score is used alone.
pub struct EnsemblePredictor<A, B> {
    pub first: A,
    pub second: B,
}

impl<A: Predictor, B: Predictor> Predictor for EnsemblePredictor<A, B> {
    fn predict(&self, user: &UserRecord, prefix: &[Message]) -> Result<Option<f64>> {
        let a = self.first.predict(user, prefix)?;
        let b = self.second.predict(user, prefix)?;
        Ok(match (a, b) {
            (Some(pa), Some(pb)) => {
                let fa = UserPrediction::new(&user.user_id, pa, self.first.source())?;
                let fb = UserPrediction::new(&user.user_id, pb, self.second.source())?;
                Some(fuse(&fa, &fb)?.probability)
            }
            (p, None) | (None, p) => p,
        })
    }

    fn source(&self) -> PredictionSource {
        PredictionSource::Ensemble
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn model(w: Vec<f64>, b: f64) -> LogisticModel {
        LogisticModel {
            weights: w,
            bias: b,
            feature_fingerprint: None,
        }
    }

    #[test]
    fn separable_one_dimensional() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![false, true];
        let m = train_logistic(
            &x,
            &y,
            &LogisticConfig {
                learning_rate: 0.5,
                epochs: 2000,
                l2_weight: 0.0,
            },
        )
        .unwrap();
        assert!(m.bias.abs() < 1e-9, "boundary {}", -m.bias / m.weights[0]);
        assert!(predict_logistic(&m, &[1.0]).unwrap() > 0.9);
        assert!(predict_logistic(&m, &[-1.0]).unwrap() < 0.1);
    }

    #[test]
    fn gradient_at_zero() {
        let x = vec![vec![1.0, 2.0], vec![-0.5, 3.0], vec![2.0, -1.0]];
        let y = vec![true, false, true];
        let l2 = 0.3;
        let g = logistic_loss_and_gradient(&LogisticModel::zeros(2), &x, &y, l2).unwrap();
        for j in 0..2 {
            let expect: f64 = x
                .iter()
                .zip(&y)
                .map(|(r, &t)| r[j] * (0.5 - if t { 1.0 } else { 0.0 }))
                .sum::<f64>()
                / 3.0;
            assert!((g.weights[j] - expect).abs() < 1e-12);
        }
        assert!((g.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn flipped_labels_negate_weights() {
        let x = vec![
            vec![1.0, 0.5],
            vec![-1.0, -0.5],
            vec![2.0, 1.0],
            vec![-2.0, -1.0],
        ];
        let y = vec![true, false, true, false];
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        let cfg = LogisticConfig::default();
        let a = train_logistic(&x, &y, &cfg).unwrap();
        let b = train_logistic(&x, &flipped, &cfg).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert!((wa + wb).abs() < 1e-12);
        }
        assert!(a.bias.abs() < 1e-12 && b.bias.abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        let err = train_logistic(
            &[vec![1.0], vec![2.0]],
            &[true, true],
            &LogisticConfig::default(),
        );
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn loss_non_increasing() {
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 - 10.0) / 3.0, ((i * 7) % 5) as f64 - 2.0])
            .collect();
        let y: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
        let mut m = LogisticModel::zeros(2);
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let g = logistic_loss_and_gradient(&m, &x, &y, 1e-4).unwrap();
            assert!(g.loss <= prev + 1e-15);
            prev = g.loss;
            for (w, gw) in m.weights.iter_mut().zip(&g.weights) {
                *w -= 0.1 * gw;
            }
            m.bias -= 0.1 * g.bias;
        }
    }

    #[test]
    fn prediction_examples() {
        assert_eq!(
            predict_logistic(&LogisticModel::zeros(3), &[1.0, 2.0, 3.0]).unwrap(),
            0.5
        );
        let m = model(vec![1.0], 0.0);
        assert!((predict_logistic(&m, &[3f64.ln()]).unwrap() - 0.75).abs() < 1e-12);
        assert!(predict_logistic(&m, &[50.0]).unwrap() > 0.999);
        assert!(predict_logistic(&m, &[-800.0]).unwrap() >= 0.0);
        assert!(matches!(
            predict_logistic(&m, &[1.0, 2.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fusion() {
        let p = |v| UserPrediction::new("u", v, PredictionSource::Metadata).unwrap();
        let q = |v| UserPrediction::new("u", v, PredictionSource::Cnn).unwrap();
        assert!((fuse(&p(0.2), &q(0.8)).unwrap().probability - 0.5).abs() < 1e-12);
        assert!((fuse(&p(0.9), &q(0.7)).unwrap().probability - 0.8).abs() < 1e-12);
        assert_eq!(fuse(&p(0.3), &q(0.3)).unwrap().probability, 0.3);
        assert_eq!(
            fuse(&p(0.3), &q(0.6)).unwrap().source,
            PredictionSource::Ensemble
        );
        let other = UserPrediction::new("v", 0.1, PredictionSource::Cnn).unwrap();
        assert!(fuse(&p(0.3), &other).is_err());
        assert!(UserPrediction::new("u", 1.5, PredictionSource::Cnn).is_err());
    }

    #[test]
    fn fingerprint_depends_on_order() {
        assert_ne!(
            feature_fingerprint(&["a", "b"]),
            feature_fingerprint(&["b", "a"])
        );
        assert_eq!(feature_fingerprint(&FEATURE_NAMES).len(), 64);
    }

    #[test]
    fn ensemble_falls_back_to_available_score() {
        struct Nothing;
        impl Predictor for Nothing {
            fn predict(&self, _: &UserRecord, _: &[Message]) -> Result<Option<f64>> {
                Ok(None)
            }
            fn source(&self) -> PredictionSource {
                PredictionSource::Cnn
            }
        }
        let u = UserRecord::new("u", Some(Label::Positive), vec![Message::new("", "hi", 1)]);
        let e = EnsemblePredictor {
            first: ConstantPredictor(0.2),
            second: Nothing,
        };
        assert_eq!(e.predict(&u, &u.messages).unwrap(), Some(0.2));
        let e = EnsemblePredictor {
            first: ConstantPredictor(0.2),
            second: LabelOracle,
        };
        assert!((e.predict(&u, &u.messages).unwrap().unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn meta_model_round_trip() {
        use crate::corpus::{generate_synthetic_corpus, GeneratorProfile};
        let users = generate_synthetic_corpus(
            6,
            6,
            3,
            &GeneratorProfile {
                max_messages: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let ex = MetadataExtractor::default();
        let m = train_metadata_model(&ex, &users, &LogisticConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.json");
        m.save_json(&path).unwrap();
        assert_eq!(MetaModel::load_json(&path).unwrap(), m);
        let pred = MetadataPredictor::new(ex, m).unwrap();
        let p = pred
            .predict(&users[0], &users[0].messages)
            .unwrap()
            .unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(pred.predict(&users[0], &[]).unwrap(), None);
    }
}
