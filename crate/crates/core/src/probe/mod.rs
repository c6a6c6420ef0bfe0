//! Softmax linear probes and the per-part ensemble built from them.
//!
//! Each probe is a multinomial logistic regression trained by full-batch
//! gradient descent from zero initialization, so training is convex and
//! bit-for-bit deterministic.

mod checkpoint;
mod ensemble;
mod explain;
mod prune;
mod vote;
mod weighted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureError;

pub use checkpoint::{Checkpoint, ProbeRecord};
pub use ensemble::{
    train_ensemble, Binding, ClassifierUnit, Dataset, Ensemble, EnsembleConfig, EnsembleFit, PartOutput, Prediction,
};
pub use explain::{explain, explain_values, Contribution, Explanation, PartExplanation};
pub use prune::{prune, PruneOutcome, PruneStep};
pub use vote::{argmax, vote, VoteDiagnostics, VoteStrategy, VOTE_TIE_EPS};
pub use weighted::{train_weighted, weighted_loss_and_gradients, WeightedGradients};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("no training rows")]
    EmptyData,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("row {0} has wrong width or non-finite values")]
    BadRow(usize),
    #[error("feature signature mismatch: {0}")]
    SignatureMismatch(String),
    #[error("need at least 2 subclasses, got {0}")]
    TooFewSubclasses(usize),
    #[error("no parts to train on")]
    NoParts,
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("features are at depth {got}, ensemble expects {expected}")]
    DepthMismatch { expected: String, got: String },
    #[error("unknown vote strategy {0:?}")]
    UnknownStrategy(String),
    #[error("cannot vote over zero probability vectors")]
    EmptyVote,
    #[error("probability vectors have different lengths")]
    VoteLengthMismatch,
    #[error("weighted vote needs a part-attribute weight matrix")]
    MissingWeights,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Gradient-descent settings. Initialization is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-4,
        }
    }
}

impl ProbeConfig {
    pub fn check(&self) -> Result<(), ProbeError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ProbeError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(ProbeError::InvalidConfig("l2 must be >= 0".into()));
        }
        Ok(())
    }
}

/// Softmax-linear classifier over a fixed, named feature slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    /// `classes x features`
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Feature keys the probe was trained on, in column order.
    pub features: Vec<String>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl Probe {
    pub fn zeros(classes: usize, features: Vec<String>) -> Self {
        Self {
            weights: vec![vec![0.0; features.len()]; classes],
            bias: vec![0.0; classes],
            features,
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn width(&self) -> usize {
        self.features.len()
    }

    pub fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b)
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, ProbeError> {
        if x.len() != self.width() {
            return Err(ProbeError::SignatureMismatch(format!(
                "row has {} features, probe expects {}",
                x.len(),
                self.width()
            )));
        }
        Ok(softmax(&self.logits_unchecked(x)))
    }

    pub fn is_finite(&self) -> bool {
        self.bias.iter().chain(self.weights.iter().flatten()).all(|v| v.is_finite())
    }
}

/// Mean cross-entropy plus `l2/2 * |W|^2` (bias unpenalized), with
/// gradients.
pub struct Gradients {
    pub loss: f64,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Per-row `softmax - onehot`, scaled by `1/n`.
    pub deltas: Vec<Vec<f64>>,
}

pub fn loss_and_gradients(probe: &Probe, rows: &[Vec<f64>], labels: &[usize], l2: f64) -> Gradients {
    let n = rows.len() as f64;
    let classes = probe.classes();
    let width = probe.width();
    let mut gw = vec![vec![0.0; width]; classes];
    let mut gb = vec![0.0; classes];
    let mut loss = 0.0;
    let mut deltas = Vec::with_capacity(rows.len());
    for (x, &y) in rows.iter().zip(labels) {
        let p = softmax(&probe.logits_unchecked(x));
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        let delta: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(c, pc)| (pc - if c == y { 1.0 } else { 0.0 }) / n)
            .collect();
        for c in 0..classes {
            let d = delta[c];
            gb[c] += d;
            for (g, xi) in gw[c].iter_mut().zip(x) {
                *g += d * xi;
            }
        }
        deltas.push(delta);
    }
    loss /= n;
    let mut penalty = 0.0;
    for (gw_c, w_c) in gw.iter_mut().zip(&probe.weights) {
        for (g, w) in gw_c.iter_mut().zip(w_c) {
            *g += l2 * w;
            penalty += w * w;
        }
    }
    Gradients {
        loss: loss + 0.5 * l2 * penalty,
        weights: gw,
        bias: gb,
        deltas,
    }
}

pub(crate) fn apply_step(probe: &mut Probe, grads: &Gradients, lr: f64) {
    for (w_c, g_c) in probe.weights.iter_mut().zip(&grads.weights) {
        for (w, g) in w_c.iter_mut().zip(g_c) {
            *w -= lr * g;
        }
    }
    for (b, g) in probe.bias.iter_mut().zip(&grads.bias) {
        *b -= lr * g;
    }
}

pub(crate) fn check_training_data(
    rows: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    width: usize,
) -> Result<(), ProbeError> {
    if rows.is_empty() {
        return Err(ProbeError::EmptyData);
    }
    if rows.len() != labels.len() {
        return Err(ProbeError::LengthMismatch {
            rows: rows.len(),
            labels: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(ProbeError::LabelOutOfRange { label, classes });
    }
    if let Some(i) = rows
        .iter()
        .position(|r| r.len() != width || r.iter().any(|v| !v.is_finite()))
    {
        return Err(ProbeError::BadRow(i));
    }
    Ok(())
}

/// Trains one probe; returns the probe and the loss recorded before each
/// epoch's update.
pub fn train_probe_with_history(
    rows: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    features: Vec<String>,
    cfg: &ProbeConfig,
) -> Result<(Probe, Vec<f64>), ProbeError> {
    cfg.check()?;
    check_training_data(rows, labels, classes, features.len())?;
    let mut probe = Probe::zeros(classes, features);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let grads = loss_and_gradients(&probe, rows, labels, cfg.l2);
        history.push(grads.loss);
        apply_step(&mut probe, &grads, cfg.learning_rate);
    }
    Ok((probe, history))
}

pub fn train_probe(
    rows: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    features: Vec<String>,
    cfg: &ProbeConfig,
) -> Result<Probe, ProbeError> {
    train_probe_with_history(rows, labels, classes, features, cfg).map(|(p, _)| p)
}
