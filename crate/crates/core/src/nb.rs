//! Multinomial Naive Bayes with Laplace smoothing, and frequency ratios.
//!
//! Likelihoods are `P(w|c) = (count(w,c) + alpha) / (tokens_c + alpha * V)`
//! and priors are document fractions. Everything is kept in log space; the
//! frequency ratio `FR(w) = P(w|num) / P(w|other)` is the exponential of a
//! log-likelihood difference.

use serde::{Deserialize, Serialize};

use crate::tokenizer::Vocabulary;
use crate::vectorizer::CountVector;
use crate::{AuditError, Label, Result};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    pub log_prior: [f64; 2],
    pub log_likelihood: [Vec<f64>; 2],
    pub alpha: f64,
    pub class_token_totals: [u64; 2],
    pub class_doc_counts: [u64; 2],
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRatioEntry {
    pub token: String,
    pub fr: f64,
    pub numerator_class: Label,
}

fn check_training_input(vectors: &[CountVector], labels: &[Label]) -> Result<[u64; 2]> {
    if vectors.len() != labels.len() {
        return Err(AuditError::LengthMismatch {
            predictions: vectors.len(),
            gold: labels.len(),
        });
    }
    let mut docs = [0u64; 2];
    for &l in labels {
        if l > 1 {
            return Err(AuditError::InvalidParameter(format!("label {l} is not 0 or 1")));
        }
        docs[l as usize] += 1;
    }
    if docs.contains(&0) {
        return Err(AuditError::DegenerateCorpus(
            "training data contains a single class".into(),
        ));
    }
    Ok(docs)
}

impl NbModel {
    pub fn train(vectors: &[CountVector], labels: &[Label], vocab_size: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(AuditError::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if vocab_size == 0 {
            return Err(AuditError::EmptyVocabulary);
        }
        let docs = check_training_input(vectors, labels)?;

        let mut counts = [vec![0u64; vocab_size], vec![0u64; vocab_size]];
        let mut totals = [0u64; 2];
        for (v, &l) in vectors.iter().zip(labels) {
            for &(i, n) in &v.pairs {
                let i = i as usize;
                if i >= vocab_size {
                    return Err(AuditError::InvalidParameter(format!(
                        "token index {i} outside vocabulary of size {vocab_size}"
                    )));
                }
                counts[l as usize][i] += u64::from(n);
                totals[l as usize] += u64::from(n);
            }
        }

        let n_docs = (docs[0] + docs[1]) as f64;
        let log_likelihood = [0, 1].map(|c| {
            let log_denom = (totals[c] as f64 + alpha * vocab_size as f64).ln();
            counts[c]
                .iter()
                .map(|&n| (n as f64 + alpha).ln() - log_denom)
                .collect::<Vec<f64>>()
        });
        Ok(NbModel {
            log_prior: [(docs[0] as f64 / n_docs).ln(), (docs[1] as f64 / n_docs).ln()],
            log_likelihood,
            alpha,
            class_token_totals: totals,
            class_doc_counts: docs,
            vocab_size,
        })
    }

    /// Per-class joint log scores of a document.
    pub fn scores(&self, vec: &CountVector) -> [f64; 2] {
        [0, 1].map(|c| {
            let ll = &self.log_likelihood[c];
            vec.pairs
                .iter()
                .fold(self.log_prior[c], |acc, &(i, n)| acc + f64::from(n) * ll[i as usize])
        })
    }

    /// Arg-max class; a tie goes to class 0.
    pub fn predict(&self, vec: &CountVector) -> (Label, [f64; 2]) {
        let s = self.scores(vec);
        (u8::from(s[1] > s[0]), s)
    }

    /// One entry per vocabulary token, sorted by ratio descending, then by token.
    pub fn frequency_ratios(&self, numerator: Label, vocab: &Vocabulary) -> Vec<FrequencyRatioEntry> {
        assert_eq!(vocab.len(), self.vocab_size, "vocabulary does not match model");
        let (num, den) = (&self.log_likelihood[numerator as usize], &self.log_likelihood[1 - numerator as usize]);
        let mut out: Vec<FrequencyRatioEntry> = vocab
            .tokens()
            .iter()
            .zip(num.iter().zip(den))
            .map(|(token, (a, b))| FrequencyRatioEntry {
                token: token.clone(),
                fr: (a - b).exp(),
                numerator_class: numerator,
            })
            .collect();
        out.sort_by(|x, y| y.fr.total_cmp(&x.fr).then_with(|| x.token.cmp(&y.token)));
        out
    }

    pub fn to_json(&self, vocab: Option<&Vocabulary>) -> Result<String> {
        let doc = NbModelDocument {
            format_version: FORMAT_VERSION,
            vocabulary_sha256: vocab.map(Vocabulary::fingerprint),
            model: self.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<(Self, Option<String>)> {
        let doc: NbModelDocument = serde_json::from_str(s)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(AuditError::Malformed(format!(
                "unsupported NB model format version {}",
                doc.format_version
            )));
        }
        Ok((doc.model, doc.vocabulary_sha256))
    }
}

#[derive(Serialize, Deserialize)]
struct NbModelDocument {
    format_version: u32,
    vocabulary_sha256: Option<String>,
    #[serde(flatten)]
    model: NbModel,
}

pub fn nb_train(vectors: &[CountVector], labels: &[Label], vocab_size: usize, alpha: f64) -> Result<NbModel> {
    NbModel::train(vectors, labels, vocab_size, alpha)
}

pub fn nb_predict(model: &NbModel, vec: &CountVector) -> (Label, [f64; 2]) {
    model.predict(vec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::build_vocabulary;
    use proptest::prelude::*;

    fn cv(pairs: &[(u32, u32)]) -> CountVector {
        CountVector::from_pairs(pairs.iter().copied())
    }

    fn hand_model() -> NbModel {
        // class 0: {a:2, b:1}; class 1: {a:1, b:2}
        NbModel::train(&[cv(&[(0, 2), (1, 1)]), cv(&[(0, 1), (1, 2)])], &[0, 1], 2, 1.0).unwrap()
    }

    fn ab_vocab() -> Vocabulary {
        build_vocabulary(&[vec!["a".to_string(), "b".to_string()]], 1).unwrap()
    }

    #[test]
    fn hand_trained_parameters() {
        let m = hand_model();
        let p = |c: usize, w: usize| m.log_likelihood[c][w].exp();
        assert!((p(0, 0) - 0.6).abs() < 1e-12);
        assert!((p(1, 0) - 0.4).abs() < 1e-12);
        assert!((p(0, 1) - 0.4).abs() < 1e-12);
        assert!((p(1, 1) - 0.6).abs() < 1e-12);
        assert!((m.log_prior[0].exp() - 0.5).abs() < 1e-12);
        assert_eq!(m.class_token_totals, [3, 3]);
    }

    #[test]
    fn hand_prediction() {
        let m = hand_model();
        let (label, s) = m.predict(&cv(&[(0, 2)]));
        assert_eq!(label, 0);
        assert!((s[0] - (0.5f64.ln() + 2.0 * 0.6f64.ln())).abs() < 1e-12);
        assert!((s[1] - (0.5f64.ln() + 2.0 * 0.4f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn prior_only_and_ties() {
        let mut m = hand_model();
        m.log_prior = [0.7f64.ln(), 0.3f64.ln()];
        assert_eq!(m.predict(&CountVector::default()).0, 0);
        m.log_prior = [0.3f64.ln(), 0.7f64.ln()];
        assert_eq!(m.predict(&CountVector::default()).0, 1);
        // symmetric model, {a:1, b:1} ties exactly
        let m = hand_model();
        let (label, s) = m.predict(&cv(&[(0, 1), (1, 1)]));
        assert_eq!(s[0], s[1]);
        assert_eq!(label, 0);
    }

    #[test]
    fn identical_classes_give_identical_likelihoods() {
        let doc = cv(&[(0, 3), (2, 1)]);
        let m = NbModel::train(&[doc.clone(), doc], &[0, 1], 3, 1.0).unwrap();
        assert_eq!(m.log_likelihood[0], m.log_likelihood[1]);
        let vocab = build_vocabulary(&[vec!["x".into(), "y".into(), "z".into()]], 1).unwrap();
        assert!(m.frequency_ratios(0, &vocab).iter().all(|e| e.fr == 1.0));
    }

    #[test]
    fn smoothing_floor() {
        let m = NbModel::train(&[cv(&[(0, 4)]), cv(&[(1, 1)])], &[0, 1], 3, 1.0).unwrap();
        // word 1 absent from class 0: alpha / (4 + 3 alpha)
        assert!((m.log_likelihood[0][1].exp() - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_fatal() {
        let r = NbModel::train(&[cv(&[(0, 1)])], &[1], 1, 1.0);
        assert!(matches!(r, Err(AuditError::DegenerateCorpus(_))));
        let r = NbModel::train(&[cv(&[(0, 1)]), cv(&[(0, 1)])], &[0, 1], 1, 0.0);
        assert!(matches!(r, Err(AuditError::InvalidParameter(_))));
    }

    #[test]
    fn frequency_ratio_hand_values() {
        let fr = hand_model().frequency_ratios(0, &ab_vocab());
        assert_eq!(fr[0].token, "a");
        assert!((fr[0].fr - 1.5).abs() < 1e-12);
        assert_eq!(fr[1].token, "b");
        assert!((fr[1].fr - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn frequency_ratio_ties_sort_by_token() {
        let m = NbModel::train(&[cv(&[(0, 1), (1, 1)]), cv(&[(0, 1), (1, 1)])], &[0, 1], 2, 1.0).unwrap();
        let fr = m.frequency_ratios(1, &ab_vocab());
        assert_eq!(fr.iter().map(|e| e.token.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn json_round_trip() {
        let m = hand_model();
        let vocab = ab_vocab();
        let (back, hash) = NbModel::from_json(&m.to_json(Some(&vocab)).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(hash, Some(vocab.fingerprint()));
        let bad = m.to_json(None).unwrap().replace("\"format_version\":1", "\"format_version\":9");
        assert!(NbModel::from_json(&bad).is_err());
    }

    fn arb_corpus() -> impl Strategy<Value = (Vec<CountVector>, Vec<Label>, usize)> {
        (1usize..8).prop_flat_map(|v| {
            prop::collection::vec(
                (prop::collection::vec((0..v as u32, 1u32..4), 0..6), 0u8..2),
                2..12,
            )
            .prop_map(move |docs| {
                let mut labels: Vec<Label> = docs.iter().map(|d| d.1).collect();
                labels[0] = 0;
                labels[1] = 1;
                (docs.into_iter().map(|d| CountVector::from_pairs(d.0)).collect(), labels, v)
            })
        })
    }

    proptest! {
        #[test]
        fn likelihoods_normalize((vectors, labels, v) in arb_corpus(), alpha in 0.1f64..3.0) {
            let m = NbModel::train(&vectors, &labels, v, alpha).unwrap();
            for c in 0..2 {
                let total: f64 = m.log_likelihood[c].iter().map(|x| x.exp()).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(m.log_likelihood[c].iter().all(|x| x.is_finite()));
            }
            prop_assert!((m.log_prior[0].exp() + m.log_prior[1].exp() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn duplicating_documents_keeps_parameters((vectors, labels, v) in arb_corpus()) {
            let m = NbModel::train(&vectors, &labels, v, 1.0).unwrap();
            let twice: Vec<CountVector> = vectors.iter().chain(&vectors).cloned().collect();
            let twice_labels: Vec<Label> = labels.iter().chain(&labels).copied().collect();
            let m2 = NbModel::train(&twice, &twice_labels, v, 1.0).unwrap();
            for c in 0..2 {
                prop_assert!((m.log_prior[c] - m2.log_prior[c]).abs() < 1e-12);
            }
            // Likelihoods are invariant once the pseudo-counts scale with the data.
            let m3 = NbModel::train(&twice, &twice_labels, v, 2.0).unwrap();
            for c in 0..2 {
                for (a, b) in m.log_likelihood[c].iter().zip(&m3.log_likelihood[c]) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn frequency_ratios_are_reciprocal((vectors, labels, v) in arb_corpus()) {
            let m = NbModel::train(&vectors, &labels, v, 1.0).unwrap();
            let tokens: Vec<String> = (0..v).map(|i| format!("t{i:02}")).collect();
            let vocab = build_vocabulary(&[tokens], 1).unwrap();
            let to_map = |c: Label| -> std::collections::HashMap<String, f64> {
                m.frequency_ratios(c, &vocab).into_iter().map(|e| (e.token, e.fr)).collect()
            };
            let (f0, f1) = (to_map(0), to_map(1));
            for (t, fr) in &f0 {
                prop_assert!(*fr > 0.0 && fr.is_finite());
                prop_assert!((f1[t] - 1.0 / fr).abs() < 1e-12);
            }
            let sorted = m.frequency_ratios(0, &vocab);
            prop_assert!(sorted.windows(2).all(|w| w[0].fr >= w[1].fr));
        }

        #[test]
        fn adding_class0_words_keeps_label_0(
            (vectors, labels, v) in arb_corpus(),
            doc in prop::collection::vec((0u32..8, 1u32..3), 0..5),
            extra in 1u32..5,
        ) {
            let m = NbModel::train(&vectors, &labels, v, 1.0).unwrap();
            let doc = CountVector::from_pairs(doc.into_iter().filter(|&(i, _)| (i as usize) < v));
            if m.predict(&doc).0 == 0 {
                for w in 0..v {
                    if m.log_likelihood[0][w] > m.log_likelihood[1][w] {
                        let more = doc.add(&CountVector::from_pairs([(w as u32, extra)]));
                        prop_assert_eq!(m.predict(&more).0, 0);
                    }
                }
            }
        }
    }
}
