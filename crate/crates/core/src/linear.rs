//! Zero-rule baseline and logistic regression on raw unigram counts.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::training::{bce_from_logit, fit, sigmoid, EarlyStopPolicy, TrainSet};
use crate::vectorizer::CountVector;
use crate::{AuditError, Label, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Always predicts the training majority; a 50/50 split goes to class 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroRuleModel {
    pub majority_label: Label,
    pub majority_fraction: f64,
}

impl ZeroRuleModel {
    pub fn train(labels: &[Label]) -> Result<Self> {
        if labels.is_empty() {
            return Err(AuditError::EmptyInput("zero-rule training labels"));
        }
        let ones = labels.iter().filter(|&&l| l == 1).count();
        let zeros = labels.len() - ones;
        let (majority_label, count) = if ones > zeros { (1, ones) } else { (0, zeros) };
        Ok(ZeroRuleModel {
            majority_label,
            majority_fraction: count as f64 / labels.len() as f64,
        })
    }

    pub fn predict(&self) -> Label {
        self.majority_label
    }
}

pub fn zero_rule_train(labels: &[Label]) -> Result<ZeroRuleModel> {
    ZeroRuleModel::train(labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Validation loss before training, then after each epoch.
    pub training_trace: Vec<f64>,
    pub best_epoch: usize,
}

/// Scratch space for sparse mini-batch gradients.
struct SparseGrad {
    dense: Vec<f64>,
    touched: Vec<u32>,
    marked: Vec<bool>,
    bias: f64,
}

impl SparseGrad {
    fn new(v: usize) -> Self {
        SparseGrad {
            dense: vec![0.0; v],
            touched: Vec::new(),
            marked: vec![false; v],
            bias: 0.0,
        }
    }

    fn add(&mut self, i: u32, value: f64) {
        let iu = i as usize;
        if !self.marked[iu] {
            self.marked[iu] = true;
            self.touched.push(i);
        }
        self.dense[iu] += value;
    }

    fn clear(&mut self) {
        for &i in &self.touched {
            self.dense[i as usize] = 0.0;
            self.marked[i as usize] = false;
        }
        self.touched.clear();
        self.bias = 0.0;
    }
}

impl LrModel {
    pub fn zeros(vocab_size: usize) -> Self {
        LrModel {
            weights: vec![0.0; vocab_size],
            bias: 0.0,
            training_trace: Vec::new(),
            best_epoch: 0,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, vec: &CountVector) -> f64 {
        vec.pairs
            .iter()
            .fold(self.bias, |acc, &(i, n)| acc + f64::from(n) * self.weights[i as usize])
    }

    /// `(label, P(class 1))`; label is 1 only when the probability exceeds 0.5.
    pub fn predict(&self, vec: &CountVector) -> (Label, f64) {
        let z = self.logit(vec);
        (u8::from(z > 0.0), sigmoid(z))
    }

    /// Adds the unregularized loss gradient of `idx` (summed, not averaged) into `grad`.
    fn accumulate(&self, vectors: &[CountVector], labels: &[Label], idx: &[usize], grad: &mut SparseGrad) -> f64 {
        let mut loss = 0.0;
        for &d in idx {
            let z = self.logit(&vectors[d]);
            loss += bce_from_logit(z, labels[d]);
            let r = sigmoid(z) - f64::from(labels[d]);
            for &(i, n) in &vectors[d].pairs {
                grad.add(i, r * f64::from(n));
            }
            grad.bias += r;
        }
        loss
    }

    /// Mean cross-entropy plus `l2 * ||w||²` over all documents, with its gradient.
    ///
    /// Returns `(loss, d loss / d weights, d loss / d bias)`.
    pub fn objective(&self, vectors: &[CountVector], labels: &[Label], l2: f64) -> (f64, Vec<f64>, f64) {
        let n = labels.len() as f64;
        let mut grad = SparseGrad::new(self.weights.len());
        let idx: Vec<usize> = (0..labels.len()).collect();
        let data_loss = self.accumulate(vectors, labels, &idx, &mut grad);
        let norm: f64 = self.weights.iter().map(|w| w * w).sum();
        let gw = grad
            .dense
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| g / n + 2.0 * l2 * w)
            .collect();
        (data_loss / n + l2 * norm, gw, grad.bias / n)
    }

    fn mean_loss(&self, vectors: &[CountVector], labels: &[Label], idx: &[usize]) -> f64 {
        let total: f64 = idx
            .iter()
            .map(|&d| bce_from_logit(self.logit(&vectors[d]), labels[d]))
            .sum();
        total / idx.len() as f64
    }

    /// Trains by mini-batch gradient descent with early stopping on a held-out split.
    pub fn train(set: &TrainSet<'_>, vocab_size: usize, policy: &EarlyStopPolicy, seed: u64) -> Result<Self> {
        set.check(vocab_size)?;
        let lr = policy.learning_rate;
        let l2 = policy.l2_lambda;
        let mut grad = SparseGrad::new(vocab_size);
        let step = |m: &mut LrModel, batch: &[usize], _: &mut ChaCha8Rng| {
            m.accumulate(set.vectors, set.labels, batch, &mut grad);
            let scale = lr / batch.len() as f64;
            if l2 > 0.0 {
                let shrink = 1.0 - 2.0 * lr * l2;
                m.weights.iter_mut().for_each(|w| *w *= shrink);
            }
            for &i in &grad.touched {
                m.weights[i as usize] -= scale * grad.dense[i as usize];
            }
            m.bias -= scale * grad.bias;
            grad.clear();
        };
        let val_loss = |m: &LrModel, idx: &[usize]| m.mean_loss(set.vectors, set.labels, idx);
        let fitted = fit(LrModel::zeros(vocab_size), set, policy, seed, step, val_loss)?;
        let mut model = fitted.params;
        if model.weights.iter().any(|w| !w.is_finite()) || !model.bias.is_finite() {
            return Err(AuditError::Divergence("non-finite logistic-regression weights".into()));
        }
        model.training_trace = fitted.trace;
        model.best_epoch = fitted.best_epoch;
        Ok(model)
    }

    /// Versioned JSON with only the nonzero weights.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&LrDocument {
            format_version: FORMAT_VERSION,
            vocab_size: self.weights.len(),
            bias: self.bias,
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i as u32, *w))
                .collect(),
            training_trace: self.training_trace.clone(),
            best_epoch: self.best_epoch,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: LrDocument = serde_json::from_str(s)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(AuditError::Malformed(format!(
                "unsupported LR model format version {}",
                doc.format_version
            )));
        }
        let mut weights = vec![0.0; doc.vocab_size];
        for (i, w) in doc.weights {
            *weights
                .get_mut(i as usize)
                .ok_or_else(|| AuditError::Malformed(format!("weight index {i} out of range")))? = w;
        }
        Ok(LrModel {
            weights,
            bias: doc.bias,
            training_trace: doc.training_trace,
            best_epoch: doc.best_epoch,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct LrDocument {
    format_version: u32,
    vocab_size: usize,
    bias: f64,
    weights: Vec<(u32, f64)>,
    training_trace: Vec<f64>,
    best_epoch: usize,
}

pub fn lr_train(set: &TrainSet<'_>, vocab_size: usize, policy: &EarlyStopPolicy, seed: u64) -> Result<LrModel> {
    LrModel::train(set, vocab_size, policy, seed)
}

pub fn lr_predict(model: &LrModel, vec: &CountVector) -> (Label, f64) {
    model.predict(vec)
}
