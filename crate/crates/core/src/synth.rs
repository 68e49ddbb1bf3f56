//! Synthetic corpora with a planted, known lexical signal.
//!
//! Every class draws tokens from the same vocabulary: `B` background words
//! with weight 1, its own `S` signal words with weight `r`, and the other
//! class's `S` signal words with weight 1. Both classes share the
//! normalizer `B + S*r + S`, so each signal word's probability under its own
//! class is exactly `r` times its probability under the other class.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{Cohort, Gender, RawRecord, DEFAULT_MIN_CHARS};
use crate::{rng, AuditError, Label, Result};

pub const MIN_BAYES_TRIALS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalParams {
    /// Mean of the log income.
    pub mu: f64,
    /// Standard deviation of the log income.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_students: usize,
    pub essays_per_student: usize,
    /// Mean document length in tokens.
    pub doc_length: usize,
    pub background_vocab: usize,
    pub signal_words_per_class: usize,
    pub signal_ratio: f64,
    /// Probability that a student belongs to class 1 (Female, AboveMedian).
    pub class_balance: f64,
    /// Income distribution per class, indexed by label.
    pub income_params: [LogNormalParams; 2],
    /// 1 puts every student in Y1; 2 alternates students between Y1 and Y2.
    pub cohorts: u8,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_students: 2000,
            essays_per_student: 2,
            doc_length: 300,
            background_vocab: 2000,
            signal_words_per_class: 5,
            signal_ratio: 4.0,
            class_balance: 0.5,
            income_params: [
                LogNormalParams { mu: 25_000f64.ln(), sigma: 0.2 },
                LogNormalParams { mu: 80_000f64.ln(), sigma: 0.2 },
            ],
            cohorts: 2,
            seed: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> AuditError {
    AuditError::InvalidParameter(msg.into())
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_students == 0 || self.essays_per_student == 0 || self.doc_length == 0 {
            return Err(invalid("n_students, essays_per_student and doc_length must be positive"));
        }
        if self.background_vocab == 0 {
            return Err(invalid("background_vocab must be at least 1"));
        }
        if !(self.signal_ratio.is_finite() && self.signal_ratio >= 1.0) {
            return Err(invalid(format!("signal_ratio must be finite and >= 1, got {}", self.signal_ratio)));
        }
        if !self.normalizer().is_finite() {
            return Err(invalid("token distribution cannot be normalized"));
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return Err(invalid(format!("class_balance must lie in (0, 1), got {}", self.class_balance)));
        }
        for p in &self.income_params {
            if !(p.mu.is_finite() && p.sigma.is_finite() && p.sigma >= 0.0) {
                return Err(invalid("income parameters must be finite with sigma >= 0"));
            }
        }
        if !(1..=2).contains(&self.cohorts) {
            return Err(invalid(format!("cohorts must be 1 or 2, got {}", self.cohorts)));
        }
        Ok(())
    }

    fn normalizer(&self) -> f64 {
        let s = self.signal_words_per_class as f64;
        self.background_vocab as f64 + s * self.signal_ratio + s
    }

    pub fn vocab_size(&self) -> usize {
        self.background_vocab + 2 * self.signal_words_per_class
    }
}

pub fn background_token(i: usize) -> String {
    format!("bg{i:05}")
}

/// Signal word `j` planted for `class`.
pub fn signal_token(class: Label, j: usize) -> String {
    format!("c{class}sig{j}")
}

/// Exact token distribution of `class`, as (token, probability) pairs.
pub fn class_distribution(spec: &SynthSpec, class: Label) -> Result<Vec<(String, f64)>> {
    spec.validate()?;
    let z = spec.normalizer();
    let mut out: Vec<(String, f64)> = (0..spec.background_vocab).map(|i| (background_token(i), 1.0 / z)).collect();
    for owner in 0..2u8 {
        let w = if owner == class { spec.signal_ratio } else { 1.0 };
        out.extend((0..spec.signal_words_per_class).map(|j| (signal_token(owner, j), w / z)));
    }
    Ok(out)
}

/// One token draw, as an index into background words or (owner, j) signal words.
enum Draw {
    Background(usize),
    Signal(Label, usize),
}

fn draw_token(spec: &SynthSpec, class: Label, z: f64, rng: &mut ChaCha8Rng) -> Draw {
    let b = spec.background_vocab as f64;
    let s = spec.signal_words_per_class;
    let own = s as f64 * spec.signal_ratio;
    let mut u = rng.random::<f64>() * z;
    if u < b || s == 0 {
        return Draw::Background((u as usize).min(spec.background_vocab - 1));
    }
    u -= b;
    if u < own {
        Draw::Signal(class, ((u / spec.signal_ratio) as usize).min(s - 1))
    } else {
        Draw::Signal(1 - class, ((u - own) as usize).min(s - 1))
    }
}

fn render_doc(spec: &SynthSpec, class: Label, z: f64, length: &Poisson<f64>, rng: &mut ChaCha8Rng) -> String {
    let n = length.sample(rng) as usize;
    let mut tokens = Vec::with_capacity(n);
    for _ in 0..n {
        tokens.push(match draw_token(spec, class, z, rng) {
            Draw::Background(i) => background_token(i),
            Draw::Signal(owner, j) => signal_token(owner, j),
        });
    }
    let mut text = tokens.join(" ");
    if text.len() < DEFAULT_MIN_CHARS {
        if !text.is_empty() {
            text.push(' ');
        }
        while text.len() < DEFAULT_MIN_CHARS {
            text.push('.');
        }
    }
    text
}

/// Planted class of each student: exactly `round(n * class_balance)` students
/// in class 1, in shuffled order.
pub fn student_classes(spec: &SynthSpec) -> Result<Vec<Label>> {
    use rand::seq::SliceRandom;
    spec.validate()?;
    let n1 = (spec.n_students as f64 * spec.class_balance).round() as usize;
    let mut classes: Vec<Label> = (0..spec.n_students).map(|i| u8::from(i < n1)).collect();
    classes.shuffle(&mut rng::stream(spec.seed, &[0]));
    Ok(classes)
}

/// Generates `n_students * essays_per_student` records.
///
/// Class 0 students report Male and draw income from `income_params[0]`;
/// class 1 students report Female and draw from `income_params[1]`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<RawRecord>> {
    let classes = student_classes(spec)?;
    let z = spec.normalizer();
    let length = Poisson::new(spec.doc_length as f64).map_err(|e| invalid(e.to_string()))?;
    let incomes = [
        LogNormal::new(spec.income_params[0].mu, spec.income_params[0].sigma).map_err(|e| invalid(e.to_string()))?,
        LogNormal::new(spec.income_params[1].mu, spec.income_params[1].sigma).map_err(|e| invalid(e.to_string()))?,
    ];
    let mut records = Vec::with_capacity(spec.n_students * spec.essays_per_student);
    for (i, &class) in classes.iter().enumerate() {
        let mut rng = rng::stream(spec.seed, &[1, i as u64]);
        let income = incomes[class as usize].sample(&mut rng).round() as u64;
        let year = if spec.cohorts == 2 && i % 2 == 1 { Cohort::Y2 } else { Cohort::Y1 };
        let student_id = format!("s{i:05}");
        for e in 0..spec.essays_per_student {
            records.push(RawRecord {
                essay_id: format!("{student_id}-e{e}"),
                student_id: student_id.clone(),
                year,
                text: render_doc(spec, class, z, &length, &mut rng),
                reported_income: Some(income),
                reported_gender: Some(if class == 1 { Gender::Female } else { Gender::Male }),
            });
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesEstimate {
    pub accuracy: f64,
    pub std_error: f64,
    pub n_trials: usize,
}

/// Monte-Carlo accuracy of the classifier that knows the true generative model.
///
/// Each trial draws a class from `class_balance` and a document from that
/// class, then decides by the exact posterior. Ties score one half, the
/// expected accuracy of a fair coin flip.
pub fn bayes_optimal_accuracy(spec: &SynthSpec, n_trials: usize) -> Result<BayesEstimate> {
    spec.validate()?;
    if n_trials < MIN_BAYES_TRIALS {
        return Err(invalid(format!("n_trials must be at least {MIN_BAYES_TRIALS}, got {n_trials}")));
    }
    let z = spec.normalizer();
    let length = Poisson::new(spec.doc_length as f64).map_err(|e| invalid(e.to_string()))?;
    let log_r = spec.signal_ratio.ln();
    let prior_log_odds = (spec.class_balance / (1.0 - spec.class_balance)).ln();
    let mut rng = rng::stream(spec.seed, &[2]);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_trials {
        let class: Label = u8::from(rng.random::<f64>() < spec.class_balance);
        let n = length.sample(&mut rng) as usize;
        // Signal counts are all that separate the two likelihoods.
        let mut counts = [0i64; 2];
        for _ in 0..n {
            if let Draw::Signal(owner, _) = draw_token(spec, class, z, &mut rng) {
                counts[owner as usize] += 1;
            }
        }
        let log_odds = prior_log_odds + (counts[1] - counts[0]) as f64 * log_r;
        let score = if log_odds == 0.0 {
            0.5
        } else if u8::from(log_odds > 0.0) == class {
            1.0
        } else {
            0.0
        };
        sum += score;
        sum_sq += score * score;
    }
    let n = n_trials as f64;
    let accuracy = sum / n;
    let variance = (sum_sq / n - accuracy * accuracy).max(0.0);
    Ok(BayesEstimate {
        accuracy,
        std_error: (variance / n).sqrt(),
        n_trials,
    })
}
