use std::collections::HashSet;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::featurize::{featurize, FeatureVector, FeaturizerConfig};
use crate::canon;
use crate::{Error, QaPair, Result, Stage};

/// Label split used when enough labels exist: 1752 train, 440 test.
pub const PROTOCOL_TOTAL: usize = 2192;
pub const PROTOCOL_TEST: usize = 440;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabel")]
pub struct LabeledPair {
    pub pair_id: String,
    /// 1 when the question is answerable from the image alone.
    pub label: u8,
}

#[derive(Deserialize)]
struct RawLabel {
    pair_id: String,
    label: u8,
}

impl TryFrom<RawLabel> for LabeledPair {
    type Error = Error;

    fn try_from(r: RawLabel) -> Result<Self> {
        LabeledPair::new(r.pair_id, r.label)
    }
}

impl LabeledPair {
    pub fn new(pair_id: String, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::InvalidData(format!("{pair_id}: label {label} is not 0 or 1")));
        }
        Ok(LabeledPair { pair_id, label })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub epochs: u32,
    /// Drives the train/heldout split only; the optimisation itself is deterministic.
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            learning_rate: 1.0,
            l2_lambda: 1e-4,
            epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub final_loss: f64,
    pub heldout_accuracy: Option<f64>,
    pub lipschitz_bound: f64,
    /// Objective before each update, then after the last one.
    pub loss_history: Vec<f64>,
    pub n_train: usize,
    pub n_heldout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelFile", try_from = "ModelFile")]
pub struct ClassifierModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hyper: Hyper,
    pub featurizer: FeaturizerConfig,
    /// Keep when `p >= threshold`.
    pub threshold: f64,
    pub training_report: TrainingReport,
}

/// On-disk form: weights as base64 of little-endian f64.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    dim: usize,
    weights_f64le_base64: String,
    bias: f64,
    hyper: Hyper,
    featurizer: FeaturizerConfig,
    threshold: f64,
    training_report: TrainingReport,
}

const MODEL_FORMAT: &str = "hashed-logreg/1";

impl From<ClassifierModel> for ModelFile {
    fn from(m: ClassifierModel) -> Self {
        let mut bytes = Vec::with_capacity(m.weights.len() * 8);
        for w in &m.weights {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        ModelFile {
            format: MODEL_FORMAT.into(),
            dim: m.weights.len(),
            weights_f64le_base64: BASE64.encode(bytes),
            bias: m.bias,
            hyper: m.hyper,
            featurizer: m.featurizer,
            threshold: m.threshold,
            training_report: m.training_report,
        }
    }
}

impl TryFrom<ModelFile> for ClassifierModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format != MODEL_FORMAT {
            return Err(Error::InvalidData(format!("unsupported model format {}", f.format)));
        }
        let bytes = BASE64
            .decode(f.weights_f64le_base64.as_bytes())
            .map_err(|e| Error::InvalidData(format!("model weights: {e}")))?;
        if bytes.len() != f.dim * 8 || f.dim != f.featurizer.dim() {
            return Err(Error::InvalidData(format!(
                "model weights hold {} bytes, expected {} for dim {}",
                bytes.len(),
                f.dim * 8,
                f.featurizer.dim()
            )));
        }
        let weights: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if !f.bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidData("model has non-finite parameters".into()));
        }
        Ok(ClassifierModel {
            weights,
            bias: f.bias,
            hyper: f.hyper,
            featurizer: f.featurizer,
            threshold: f.threshold,
            training_report: f.training_report,
        })
    }
}

impl ClassifierModel {
    /// The untrained model: all weights and the bias zero.
    pub fn zeros(featurizer: FeaturizerConfig, hyper: Hyper) -> Self {
        ClassifierModel {
            weights: vec![0.0; featurizer.dim()],
            bias: 0.0,
            hyper,
            featurizer,
            threshold: 0.5,
            training_report: TrainingReport {
                final_loss: std::f64::consts::LN_2,
                heldout_accuracy: None,
                lipschitz_bound: 0.0,
                loss_history: vec![],
                n_train: 0,
                n_heldout: 0,
            },
        }
    }

    pub fn keeps(&self, probability: f64) -> bool {
        probability >= self.threshold
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Regularised mean logistic loss and its gradient.
///
/// `J(w, b) = mean(softplus(z) - y z) + (lambda / 2) |w|^2` with `z = w.x + b`.
/// The bias is not regularised. `grad_w` is overwritten; the bias gradient is
/// returned with the loss.
pub fn objective(
    data: &[(FeatureVector, u8)],
    weights: &[f64],
    bias: f64,
    l2_lambda: f64,
    grad_w: &mut [f64],
) -> (f64, f64) {
    let n = data.len() as f64;
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = l2_lambda * w;
    }
    let mut loss = 0.0;
    let mut grad_b = 0.0;
    for (x, y) in data {
        let y = *y as f64;
        let z = x.dot(weights) + bias;
        loss += softplus(z) - y * z;
        let r = (sigmoid(z) - y) / n;
        grad_b += r;
        for &(i, v) in x.entries() {
            grad_w[i as usize] += r * v;
        }
    }
    let reg: f64 = weights.iter().map(|w| w * w).sum::<f64>() * l2_lambda / 2.0;
    (loss / n + reg, grad_b)
}

/// Upper bound on the gradient's Lipschitz constant:
/// `0.25 * mean(|x|^2 + 1) + lambda`. Gradient descent with a learning rate
/// at most `1 / L` never increases the objective.
pub fn lipschitz_bound(data: &[(FeatureVector, u8)], l2_lambda: f64) -> f64 {
    let mean = data.iter().map(|(x, _)| x.norm_squared() + 1.0).sum::<f64>() / data.len() as f64;
    0.25 * mean + l2_lambda
}

/// Full-batch gradient descent from zero for `hyper.epochs` steps.
pub fn train(data: &[(FeatureVector, u8)], hyper: &Hyper) -> Result<ClassifierModel> {
    let Some((first, _)) = data.first() else {
        return Err(Error::Precondition("no labelled examples to train on".into()));
    };
    let dim = first.dim();
    if !dim.is_power_of_two() || data.iter().any(|(x, _)| x.dim() != dim) {
        return Err(Error::Precondition(
            "feature vectors must share one power-of-two dimension".into(),
        ));
    }
    if let Some((_, y)) = data.iter().find(|(_, y)| *y > 1) {
        return Err(Error::InvalidData(format!("label {y} is not 0 or 1")));
    }
    let positives = data.iter().filter(|(_, y)| *y == 1).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::Precondition(
            "training labels must contain both classes".into(),
        ));
    }

    let lipschitz = lipschitz_bound(data, hyper.l2_lambda);
    if hyper.learning_rate > 1.0 / lipschitz {
        tracing::warn!(
            learning_rate = hyper.learning_rate,
            bound = 1.0 / lipschitz,
            "learning rate exceeds 1/L; the loss may not decrease monotonically"
        );
    }
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut grad = vec![0.0; dim];
    let mut history = Vec::with_capacity(hyper.epochs as usize + 1);
    for _ in 0..hyper.epochs {
        let (loss, grad_b) = objective(data, &w, b, hyper.l2_lambda, &mut grad);
        history.push(loss);
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= hyper.learning_rate * gi;
        }
        b -= hyper.learning_rate * grad_b;
    }
    let (final_loss, _) = objective(data, &w, b, hyper.l2_lambda, &mut grad);
    history.push(final_loss);
    if !final_loss.is_finite() || !b.is_finite() || w.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidData("training diverged to non-finite parameters".into()));
    }
    tracing::debug!(final_loss, lipschitz, epochs = hyper.epochs, "classifier trained");

    Ok(ClassifierModel {
        weights: w,
        bias: b,
        hyper: *hyper,
        featurizer: FeaturizerConfig {
            include_options: true,
            bits: dim.trailing_zeros(),
        },
        threshold: 0.5,
        training_report: TrainingReport {
            final_loss,
            heldout_accuracy: None,
            lipschitz_bound: lipschitz,
            loss_history: history,
            n_train: data.len(),
            n_heldout: 0,
        },
    })
}

pub fn predict(model: &ClassifierModel, x: &FeatureVector) -> f64 {
    sigmoid(x.dot(&model.weights) + model.bias)
}

pub fn predict_pair(model: &ClassifierModel, pair: &QaPair) -> f64 {
    predict(model, &featurize(&pair.question, &pair.option_texts(), &model.featurizer))
}

/// Fraction of examples whose keep decision matches the label.
pub fn evaluate(model: &ClassifierModel, heldout: &[(FeatureVector, u8)]) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::Precondition("heldout set is empty".into()));
    }
    let correct = heldout
        .iter()
        .filter(|(x, y)| model.keeps(predict(model, x)) == (*y == 1))
        .count();
    Ok(correct as f64 / heldout.len() as f64)
}

/// Indices of the train and heldout parts for `n` labels. With at least
/// [`PROTOCOL_TOTAL`] labels the heldout part has [`PROTOCOL_TEST`] items,
/// otherwise a fifth (rounded) of them.
pub fn protocol_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_test = if n >= PROTOCOL_TOTAL {
        PROTOCOL_TEST
    } else if n >= 2 {
        ((n as f64 * 0.2).round() as usize).max(1)
    } else {
        0
    };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut canon::rng_for(&[b"classifier-split", &seed.to_le_bytes()]));
    let mut test = idx.split_off(n - n_test);
    idx.sort_unstable();
    test.sort_unstable();
    (idx, test)
}

/// Train on the protocol's train part and record heldout accuracy.
/// `labeled` should be in a canonical order, such as sorted by pair id.
pub fn train_protocol(
    labeled: &[(FeatureVector, u8)],
    featurizer: FeaturizerConfig,
    hyper: &Hyper,
) -> Result<ClassifierModel> {
    let (train_idx, test_idx) = protocol_split(labeled.len(), hyper.seed);
    let train_set: Vec<_> = train_idx.iter().map(|&i| labeled[i].clone()).collect();
    let test_set: Vec<_> = test_idx.iter().map(|&i| labeled[i].clone()).collect();
    let mut model = train(&train_set, hyper)?;
    model.featurizer = featurizer;
    if !test_set.is_empty() {
        let acc = evaluate(&model, &test_set)?;
        tracing::info!(
            accuracy = acc,
            n_train = train_set.len(),
            n_heldout = test_set.len(),
            "classifier heldout accuracy (reference figure 0.8177 at full scale)"
        );
        model.training_report.heldout_accuracy = Some(acc);
    }
    model.training_report.n_heldout = test_set.len();
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub input: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Mean kept pairs per image, `None` when nothing is kept.
    pub pairs_per_image: Option<f64>,
}

/// Keep pairs with `p >= threshold`, moving them to `kept_by_classifier`.
pub fn apply_classifier(
    pairs: &[QaPair],
    model: &ClassifierModel,
) -> Result<(Vec<QaPair>, ClassifierSummary)> {
    let probs: Vec<f64> = pairs.par_iter().map(|p| predict_pair(model, p)).collect();
    let mut kept = Vec::new();
    for (pair, p) in pairs.iter().zip(probs) {
        if model.keeps(p) {
            let mut pair = pair.clone();
            pair.advance(Stage::KeptByClassifier)?;
            kept.push(pair);
        }
    }
    let images: HashSet<&str> = kept.iter().map(|p| p.record_id.as_str()).collect();
    let summary = ClassifierSummary {
        input: pairs.len(),
        kept: kept.len(),
        dropped: pairs.len() - kept.len(),
        pairs_per_image: (!images.is_empty()).then(|| kept.len() as f64 / images.len() as f64),
    };
    tracing::info!(
        kept = summary.kept,
        dropped = summary.dropped,
        pairs_per_image = ?summary.pairs_per_image,
        "classifier applied (reference figure 3.93 pairs per image at full scale)"
    );
    Ok((kept, summary))
}
