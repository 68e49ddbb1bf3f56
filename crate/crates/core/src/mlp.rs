//! One-hidden-layer network: ReLU hidden units, inverted dropout, sigmoid output.
//!
//! `W1` is stored row-major with one row of `hidden_size` weights per
//! vocabulary index, so a sparse document touches only its own rows.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::training::{bce_from_logit, fit, sigmoid, EarlyStopPolicy, TrainSet};
use crate::vectorizer::CountVector;
use crate::{AuditError, Label, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 150;
pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const DEFAULT_L2: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_size: usize,
    pub dropout_rate: f64,
    /// Keys left out fall back to the network defaults (including L2 1e-4).
    #[serde(deserialize_with = "policy_over_defaults")]
    pub policy: EarlyStopPolicy,
}

fn policy_over_defaults<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<EarlyStopPolicy, D::Error> {
    use serde::de::Error;
    let given = serde_json::Value::deserialize(d)?;
    let mut merged = serde_json::to_value(MlpConfig::default().policy).map_err(D::Error::custom)?;
    match (merged.as_object_mut(), given.as_object()) {
        (Some(base), Some(keys)) => base.extend(keys.clone()),
        _ => return Err(D::Error::custom("policy must be a JSON object")),
    }
    serde_json::from_value(merged).map_err(D::Error::custom)
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_size: DEFAULT_HIDDEN,
            dropout_rate: DEFAULT_DROPOUT,
            policy: EarlyStopPolicy {
                l2_lambda: DEFAULT_L2,
                ..EarlyStopPolicy::default()
            },
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(AuditError::InvalidParameter("hidden_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(AuditError::InvalidParameter(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        self.policy.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub vocab_size: usize,
    pub hidden_size: usize,
    /// `vocab_size × hidden_size`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    pub training_trace: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from a stream seeded by the value.
    Train(u64),
    Eval,
}

/// Output of a forward pass together with the activations backprop needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub probability: f64,
    pub logit: f64,
    /// Hidden pre-activations `W1ᵀx + b1`.
    pub pre_activation: Vec<f64>,
    /// Hidden outputs after ReLU and dropout scaling.
    pub hidden: Vec<f64>,
    /// Per-unit dropout multipliers (0 or `1/(1-rate)`), or `None` in eval mode.
    pub mask: Option<Vec<f64>>,
}

/// Gradient of the regularized objective, laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpGradient {
    /// Same order as [`MlpModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.w1.clone();
        out.extend(&self.b1);
        out.extend(&self.w2);
        out.push(self.b2);
        out
    }
}

/// Dense W1 gradient with row tracking so updates only visit touched rows.
struct GradBuf {
    w1: Vec<f64>,
    rows: Vec<u32>,
    marked: Vec<bool>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    mask: Vec<f64>,
}

impl GradBuf {
    fn new(v: usize, h: usize) -> Self {
        GradBuf {
            w1: vec![0.0; v * h],
            rows: Vec::new(),
            marked: vec![false; v],
            b1: vec![0.0; h],
            w2: vec![0.0; h],
            b2: 0.0,
            pre: vec![0.0; h],
            hidden: vec![0.0; h],
            mask: vec![1.0; h],
        }
    }

    fn clear(&mut self, h: usize) {
        for &r in &self.rows {
            let r = r as usize;
            self.w1[r * h..(r + 1) * h].iter_mut().for_each(|g| *g = 0.0);
            self.marked[r] = false;
        }
        self.rows.clear();
        self.b1.iter_mut().for_each(|g| *g = 0.0);
        self.w2.iter_mut().for_each(|g| *g = 0.0);
        self.b2 = 0.0;
    }
}

fn draw_mask(rate: f64, rng: &mut ChaCha8Rng, mask: &mut [f64]) {
    let keep = 1.0 / (1.0 - rate);
    for m in mask.iter_mut() {
        *m = if rng.random::<f64>() < rate { 0.0 } else { keep };
    }
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(vocab_size: usize, hidden_size: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 || hidden_size == 0 {
            return Err(AuditError::InvalidParameter(
                "vocabulary and hidden layer sizes must be at least 1".into(),
            ));
        }
        let mut rng = rng::stream(seed, &[0x1]);
        let limit1 = (6.0 / (vocab_size + hidden_size) as f64).sqrt();
        let limit2 = (6.0 / (hidden_size + 1) as f64).sqrt();
        let w1 = (0..vocab_size * hidden_size)
            .map(|_| rng.random_range(-limit1..limit1))
            .collect();
        let w2 = (0..hidden_size).map(|_| rng.random_range(-limit2..limit2)).collect();
        Ok(MlpModel {
            vocab_size,
            hidden_size,
            w1,
            b1: vec![0.0; hidden_size],
            w2,
            b2: 0.0,
            dropout_rate: DEFAULT_DROPOUT,
            l2_lambda: DEFAULT_L2,
            training_trace: Vec::new(),
            best_epoch: 0,
        })
    }

    fn row(&self, i: u32) -> &[f64] {
        let h = self.hidden_size;
        &self.w1[i as usize * h..(i as usize + 1) * h]
    }

    /// Fills `pre` and `hidden`, returns the output logit.
    fn forward_into(&self, x: &CountVector, mask: Option<&[f64]>, pre: &mut [f64], hidden: &mut [f64]) -> f64 {
        pre.copy_from_slice(&self.b1);
        for &(i, n) in &x.pairs {
            let n = f64::from(n);
            for (p, w) in pre.iter_mut().zip(self.row(i)) {
                *p += n * w;
            }
        }
        for (j, (h, &p)) in hidden.iter_mut().zip(pre.iter()).enumerate() {
            *h = p.max(0.0) * mask.map_or(1.0, |m| m[j]);
        }
        hidden.iter().zip(&self.w2).fold(self.b2, |acc, (h, w)| acc + h * w)
    }

    pub fn forward(&self, x: &CountVector, mode: Mode) -> Result<Forward> {
        let h = self.hidden_size;
        let mask = match mode {
            Mode::Train(seed) if self.dropout_rate > 0.0 => {
                let mut m = vec![0.0; h];
                draw_mask(self.dropout_rate, &mut rng::stream(seed, &[0x2]), &mut m);
                Some(m)
            }
            Mode::Train(_) => Some(vec![1.0; h]),
            Mode::Eval => None,
        };
        let mut pre = vec![0.0; h];
        let mut hidden = vec![0.0; h];
        let logit = self.forward_into(x, mask.as_deref(), &mut pre, &mut hidden);
        if !logit.is_finite() || pre.iter().any(|p| !p.is_finite()) {
            return Err(AuditError::Divergence("non-finite activation in forward pass".into()));
        }
        Ok(Forward {
            probability: sigmoid(logit),
            logit,
            pre_activation: pre,
            hidden,
            mask,
        })
    }

    /// Eval-mode prediction; probability exactly 0.5 goes to class 0.
    pub fn predict(&self, x: &CountVector) -> (Label, f64) {
        let mut pre = vec![0.0; self.hidden_size];
        let mut hidden = vec![0.0; self.hidden_size];
        let z = self.forward_into(x, None, &mut pre, &mut hidden);
        (u8::from(z > 0.0), sigmoid(z))
    }

    /// Backpropagates one document into `buf`; returns its cross-entropy.
    fn backprop(&self, x: &CountVector, y: Label, mask: Option<&[f64]>, buf: &mut GradBuf) -> f64 {
        let h = self.hidden_size;
        let mut pre = std::mem::take(&mut buf.pre);
        let mut hidden = std::mem::take(&mut buf.hidden);
        let z = self.forward_into(x, mask, &mut pre, &mut hidden);
        let dz = sigmoid(z) - f64::from(y);
        buf.b2 += dz;
        for j in 0..h {
            buf.w2[j] += dz * hidden[j];
            // reuse `pre` as d loss / d pre-activation
            let scale = mask.map_or(1.0, |m| m[j]);
            pre[j] = if pre[j] > 0.0 { dz * self.w2[j] * scale } else { 0.0 };
            buf.b1[j] += pre[j];
        }
        for &(i, n) in &x.pairs {
            let iu = i as usize;
            if !buf.marked[iu] {
                buf.marked[iu] = true;
                buf.rows.push(i);
            }
            let n = f64::from(n);
            for (g, d) in buf.w1[iu * h..(iu + 1) * h].iter_mut().zip(&pre) {
                *g += n * d;
            }
        }
        buf.pre = pre;
        buf.hidden = hidden;
        bce_from_logit(z, y)
    }

    fn l2_norm(&self) -> f64 {
        self.w1.iter().chain(&self.w2).map(|w| w * w).sum()
    }

    /// Mean cross-entropy plus `l2_lambda * (‖W1‖² + ‖W2‖²)` over all documents, and its gradient.
    ///
    /// `masks`, when given, fixes one dropout multiplier vector per document.
    pub fn objective(
        &self,
        vectors: &[CountVector],
        labels: &[Label],
        masks: Option<&[Vec<f64>]>,
    ) -> (f64, MlpGradient) {
        let n = labels.len() as f64;
        let mut buf = GradBuf::new(self.vocab_size, self.hidden_size);
        let mut loss = 0.0;
        for (d, (x, &y)) in vectors.iter().zip(labels).enumerate() {
            loss += self.backprop(x, y, masks.map(|m| m[d].as_slice()), &mut buf);
        }
        let reg = 2.0 * self.l2_lambda;
        let grad = MlpGradient {
            w1: buf.w1.iter().zip(&self.w1).map(|(g, w)| g / n + reg * w).collect(),
            b1: buf.b1.iter().map(|g| g / n).collect(),
            w2: buf.w2.iter().zip(&self.w2).map(|(g, w)| g / n + reg * w).collect(),
            b2: buf.b2 / n,
        };
        (loss / n + self.l2_lambda * self.l2_norm(), grad)
    }

    /// All parameters as `[W1, b1, W2, b2]`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = self.w1.clone();
        out.extend(&self.b1);
        out.extend(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let (v, h) = (self.vocab_size, self.hidden_size);
        assert_eq!(params.len(), v * h + 2 * h + 1);
        self.w1.copy_from_slice(&params[..v * h]);
        self.b1.copy_from_slice(&params[v * h..v * h + h]);
        self.w2.copy_from_slice(&params[v * h + h..v * h + 2 * h]);
        self.b2 = params[v * h + 2 * h];
    }

    fn mean_loss(&self, vectors: &[CountVector], labels: &[Label], idx: &[usize]) -> f64 {
        let mut pre = vec![0.0; self.hidden_size];
        let mut hidden = vec![0.0; self.hidden_size];
        let total: f64 = idx
            .iter()
            .map(|&d| bce_from_logit(self.forward_into(&vectors[d], None, &mut pre, &mut hidden), labels[d]))
            .sum();
        total / idx.len() as f64
    }

    /// Seeded mini-batch backpropagation with early stopping.
    pub fn train(set: &TrainSet<'_>, vocab_size: usize, config: &MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        set.check(vocab_size)?;
        let mut init = MlpModel::init(vocab_size, config.hidden_size, seed)?;
        init.dropout_rate = config.dropout_rate;
        init.l2_lambda = config.policy.l2_lambda;

        let h = config.hidden_size;
        let lr = config.policy.learning_rate;
        let shrink = 1.0 - 2.0 * lr * init.l2_lambda;
        let mut buf = GradBuf::new(vocab_size, h);
        let step = |m: &mut MlpModel, batch: &[usize], rng: &mut ChaCha8Rng| {
            let mut mask = std::mem::take(&mut buf.mask);
            for &d in batch {
                let active = if m.dropout_rate > 0.0 {
                    draw_mask(m.dropout_rate, rng, &mut mask);
                    Some(mask.as_slice())
                } else {
                    None
                };
                m.backprop(&set.vectors[d], set.labels[d], active, &mut buf);
            }
            buf.mask = mask;
            let scale = lr / batch.len() as f64;
            if shrink != 1.0 {
                m.w1.iter_mut().chain(m.w2.iter_mut()).for_each(|w| *w *= shrink);
            }
            for &r in &buf.rows {
                let r = r as usize;
                for (w, g) in m.w1[r * h..(r + 1) * h].iter_mut().zip(&buf.w1[r * h..(r + 1) * h]) {
                    *w -= scale * g;
                }
            }
            for j in 0..h {
                m.b1[j] -= scale * buf.b1[j];
                m.w2[j] -= scale * buf.w2[j];
            }
            m.b2 -= scale * buf.b2;
            buf.clear(h);
        };
        let val_loss = |m: &MlpModel, idx: &[usize]| m.mean_loss(set.vectors, set.labels, idx);
        let fitted = fit(init, set, &config.policy, seed, step, val_loss)?;
        let mut model = fitted.params;
        if model.parameters().iter().any(|p| !p.is_finite()) {
            return Err(AuditError::Divergence("non-finite network parameters".into()));
        }
        model.training_trace = fitted.trace;
        model.best_epoch = fitted.best_epoch;
        Ok(model)
    }

    /// Versioned JSON; W1 is written row-sparse (all-zero rows omitted).
    pub fn to_json(&self) -> Result<String> {
        let h = self.hidden_size;
        let w1_rows = (0..self.vocab_size)
            .filter_map(|r| {
                let row = &self.w1[r * h..(r + 1) * h];
                row.iter().any(|w| *w != 0.0).then(|| (r as u32, row.to_vec()))
            })
            .collect();
        Ok(serde_json::to_string(&MlpDocument {
            format_version: FORMAT_VERSION,
            vocab_size: self.vocab_size,
            hidden_size: h,
            dropout_rate: self.dropout_rate,
            l2_lambda: self.l2_lambda,
            w1_rows,
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2,
            training_trace: self.training_trace.clone(),
            best_epoch: self.best_epoch,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MlpDocument = serde_json::from_str(s)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(AuditError::Malformed(format!(
                "unsupported MLP model format version {}",
                doc.format_version
            )));
        }
        let h = doc.hidden_size;
        if doc.b1.len() != h || doc.w2.len() != h {
            return Err(AuditError::Malformed("hidden-layer arrays do not match hidden_size".into()));
        }
        let mut w1 = vec![0.0; doc.vocab_size * h];
        for (r, row) in doc.w1_rows {
            let r = r as usize;
            if r >= doc.vocab_size || row.len() != h {
                return Err(AuditError::Malformed(format!("bad W1 row {r}")));
            }
            w1[r * h..(r + 1) * h].copy_from_slice(&row);
        }
        Ok(MlpModel {
            vocab_size: doc.vocab_size,
            hidden_size: h,
            w1,
            b1: doc.b1,
            w2: doc.w2,
            b2: doc.b2,
            dropout_rate: doc.dropout_rate,
            l2_lambda: doc.l2_lambda,
            training_trace: doc.training_trace,
            best_epoch: doc.best_epoch,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MlpDocument {
    format_version: u32,
    vocab_size: usize,
    hidden_size: usize,
    dropout_rate: f64,
    l2_lambda: f64,
    w1_rows: Vec<(u32, Vec<f64>)>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    training_trace: Vec<f64>,
    best_epoch: usize,
}

pub fn mlp_init(vocab_size: usize, hidden_size: usize, seed: u64) -> Result<MlpModel> {
    MlpModel::init(vocab_size, hidden_size, seed)
}

pub fn mlp_forward(model: &MlpModel, x: &CountVector, mode: Mode) -> Result<Forward> {
    model.forward(x, mode)
}

pub fn mlp_train(set: &TrainSet<'_>, vocab_size: usize, config: &MlpConfig, seed: u64) -> Result<MlpModel> {
    MlpModel::train(set, vocab_size, config, seed)
}
