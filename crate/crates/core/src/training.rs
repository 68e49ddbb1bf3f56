//! Mini-batch training with a held-out validation split and early stopping.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::vectorizer::CountVector;
use crate::{AuditError, Label, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopPolicy {
    pub validation_fraction: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
}

impl Default for EarlyStopPolicy {
    fn default() -> Self {
        EarlyStopPolicy {
            validation_fraction: 0.1,
            patience: 3,
            max_epochs: 200,
            learning_rate: 0.1,
            l2_lambda: 0.0,
            batch_size: 64,
        }
    }
}

impl EarlyStopPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AuditError::InvalidParameter(msg));
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad(format!("validation_fraction must be in (0, 0.5), got {}", self.validation_fraction));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad(format!("l2_lambda must be non-negative, got {}", self.l2_lambda));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// Training documents with optional group ids (one group per student).
///
/// The validation split never separates a group.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub vectors: &'a [CountVector],
    pub labels: &'a [Label],
    pub groups: Option<&'a [u32]>,
}

impl<'a> TrainSet<'a> {
    pub fn new(vectors: &'a [CountVector], labels: &'a [Label]) -> Self {
        TrainSet { vectors, labels, groups: None }
    }

    pub fn with_groups(mut self, groups: &'a [u32]) -> Self {
        self.groups = Some(groups);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub(crate) fn check(&self, vocab_size: usize) -> Result<()> {
        if self.vectors.len() != self.labels.len() {
            return Err(AuditError::LengthMismatch {
                predictions: self.vectors.len(),
                gold: self.labels.len(),
            });
        }
        if let Some(g) = self.groups {
            if g.len() != self.labels.len() {
                return Err(AuditError::InvalidParameter("one group id per document required".into()));
            }
        }
        if !self.labels.contains(&0) || !self.labels.contains(&1) {
            return Err(AuditError::DegenerateCorpus("training data contains a single class".into()));
        }
        if let Some(i) = self.vectors.iter().filter_map(CountVector::max_index).max() {
            if i as usize >= vocab_size {
                return Err(AuditError::InvalidParameter(format!(
                    "token index {i} outside vocabulary of size {vocab_size}"
                )));
            }
        }
        Ok(())
    }

    /// Stratified (by label) group-level split into (train, validation) document indices.
    ///
    /// Each class keeps at least one group on the training side. When no
    /// group can be spared the validation side is the training side.
    pub fn split(&self, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
        let group_of = |i: usize| self.groups.map_or(i as u32, |g| g[i]);
        let mut first_label: std::collections::BTreeMap<u32, Label> = Default::default();
        for (i, &l) in self.labels.iter().enumerate() {
            first_label.entry(group_of(i)).or_insert(l);
        }
        let mut held_out = std::collections::HashSet::new();
        for class in 0..2u8 {
            let mut groups: Vec<u32> = first_label
                .iter()
                .filter(|&(_, &l)| l == class)
                .map(|(&g, _)| g)
                .collect();
            groups.shuffle(rng);
            let n_val = ((fraction * groups.len() as f64).round() as usize).min(groups.len().saturating_sub(1));
            held_out.extend(groups.into_iter().take(n_val));
        }
        let (val, train): (Vec<usize>, Vec<usize>) =
            (0..self.len()).partition(|&i| held_out.contains(&group_of(i)));
        if val.is_empty() {
            let all = train.clone();
            (train, all)
        } else {
            (train, val)
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of logit `z` against label `y`, computed without overflow.
pub(crate) fn bce_from_logit(z: f64, y: Label) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - f64::from(y) * z
}

const SPLIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

pub(crate) struct Fitted<P> {
    pub params: P,
    pub trace: Vec<f64>,
    pub best_epoch: usize,
}

/// Runs mini-batch epochs until validation loss stalls for `patience` epochs.
///
/// `trace[0]` is the loss of the initial parameters; the returned parameters
/// are those of the first epoch attaining the minimum of `trace`.
pub(crate) fn fit<P: Clone>(
    init: P,
    set: &TrainSet<'_>,
    policy: &EarlyStopPolicy,
    seed: u64,
    mut step: impl FnMut(&mut P, &[usize], &mut ChaCha8Rng),
    val_loss: impl Fn(&P, &[usize]) -> f64,
) -> Result<Fitted<P>> {
    policy.validate()?;
    let mut split_rng = rng::stream(seed, &[SPLIT_STREAM]);
    let mut rng = rng::stream(seed, &[BATCH_STREAM]);
    let (mut train, val) = set.split(policy.validation_fraction, &mut split_rng);

    let initial = val_loss(&init, &val);
    if !initial.is_finite() {
        return Err(AuditError::Divergence("initial validation loss is not finite".into()));
    }
    let mut fitted = Fitted {
        params: init.clone(),
        trace: vec![initial],
        best_epoch: 0,
    };
    let mut best = initial;
    let mut params = init;
    let mut stale = 0;
    for epoch in 1..=policy.max_epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(policy.batch_size) {
            step(&mut params, batch, &mut rng);
        }
        let loss = val_loss(&params, &val);
        if !loss.is_finite() {
            return Err(AuditError::Divergence(format!(
                "validation loss became {loss} at epoch {epoch} (learning rate {})",
                policy.learning_rate
            )));
        }
        fitted.trace.push(loss);
        if loss < best {
            best = loss;
            stale = 0;
            fitted.params = params.clone();
            fitted.best_epoch = epoch;
        } else {
            stale += 1;
            if stale >= policy.patience {
                break;
            }
        }
    }
    Ok(fitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn policy_validation() {
        assert!(EarlyStopPolicy::default().validate().is_ok());
        for p in [
            EarlyStopPolicy { validation_fraction: 0.0, ..Default::default() },
            EarlyStopPolicy { validation_fraction: 0.5, ..Default::default() },
            EarlyStopPolicy { patience: 0, ..Default::default() },
            EarlyStopPolicy { learning_rate: -1.0, ..Default::default() },
            EarlyStopPolicy { l2_lambda: f64::NAN, ..Default::default() },
            EarlyStopPolicy { batch_size: 0, ..Default::default() },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn split_is_stratified_and_keeps_groups_together() {
        let vectors = vec![CountVector::default(); 40];
        let labels: Vec<Label> = (0..40).map(|i| u8::from(i % 4 >= 2)).collect();
        let groups: Vec<u32> = (0..40).map(|i| i / 2).collect();
        let set = TrainSet::new(&vectors, &labels).with_groups(&groups);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (train, val) = set.split(0.1, &mut rng);
        assert_eq!(train.len() + val.len(), 40);
        // 10 groups per class -> one group (two documents) per class held out
        assert_eq!(val.len(), 4);
        assert_eq!(val.iter().filter(|&&i| labels[i] == 1).count(), 2);
        for &v in &val {
            assert!(!train.iter().any(|&t| groups[t] == groups[v]));
        }
    }

    #[test]
    fn tiny_split_falls_back_to_training_data() {
        let vectors = vec![CountVector::default(); 2];
        let labels = [0, 1];
        let set = TrainSet::new(&vectors, &labels);
        let (train, val) = set.split(0.1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(train, vec![0, 1]);
        assert_eq!(val, vec![0, 1]);
    }

    #[test]
    fn numerics_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(bce_from_logit(800.0, 1).abs() < 1e-12);
        assert!((bce_from_logit(-800.0, 1) - 800.0).abs() < 1e-9);
        assert!((bce_from_logit(0.0, 0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn fit_stops_after_patience_and_returns_best() {
        let vectors = vec![CountVector::default(); 10];
        let labels: Vec<Label> = (0..10).map(|i| (i % 2) as u8).collect();
        let set = TrainSet::new(&vectors, &labels);
        let policy = EarlyStopPolicy { patience: 2, max_epochs: 50, ..Default::default() };
        // Loss is a function of the epoch counter: 5, 4, 3, 3.5, 3.2, 3.1, ...
        let losses = [5.0, 4.0, 3.0, 3.5, 3.2, 3.1, 1.0];
        let fitted = fit(0usize, &set, &policy, 1, |_, _, _| {}, |_, _| 0.0).unwrap();
        assert_eq!(fitted.best_epoch, 0);
        assert_eq!(fitted.trace.len(), 3);

        let epoch = std::cell::Cell::new(0usize);
        let fitted = fit(
            0usize,
            &set,
            &policy,
            1,
            |_, _, _| {},
            |_, _| {
                let e = epoch.get();
                epoch.set(e + 1);
                losses[e.min(losses.len() - 1)]
            },
        )
        .unwrap();
        assert_eq!(fitted.trace, vec![5.0, 4.0, 3.0, 3.5, 3.2]);
        assert_eq!(fitted.best_epoch, 2);
    }
}
