//! Sparse unigram count vectors.

use serde::{Deserialize, Serialize};

use crate::tokenizer::Vocabulary;

/// Sparse bag-of-words counts over a fixed vocabulary.
///
/// `pairs` holds `(index, count)` with strictly increasing indices and
/// counts of at least one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountVector {
    pub pairs: Vec<(u32, u32)>,
    /// Sum of the in-vocabulary counts.
    pub total_tokens: u64,
    /// Tokens dropped because the vocabulary does not contain them.
    pub oov_tokens: u64,
}

impl CountVector {
    /// Builds a vector from unsorted `(index, count)` pairs, merging repeats.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut raw: Vec<(u32, u32)> = pairs.into_iter().filter(|&(_, n)| n > 0).collect();
        raw.sort_unstable_by_key(|&(i, _)| i);
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(raw.len());
        for (i, n) in raw {
            match merged.last_mut() {
                Some((last, count)) if *last == i => *count += n,
                _ => merged.push((i, n)),
            }
        }
        let total_tokens = merged.iter().map(|&(_, n)| u64::from(n)).sum();
        CountVector {
            pairs: merged,
            total_tokens,
            oov_tokens: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Element-wise sum of two vectors.
    pub fn add(&self, other: &CountVector) -> CountVector {
        let mut out = CountVector::from_pairs(self.pairs.iter().chain(&other.pairs).copied());
        out.oov_tokens = self.oov_tokens + other.oov_tokens;
        out
    }

    pub fn max_index(&self) -> Option<u32> {
        self.pairs.last().map(|&(i, _)| i)
    }
}

/// Counts the in-vocabulary tokens of `tokens`.
pub fn vectorize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> CountVector {
    let mut oov = 0u64;
    let mut indices: Vec<u32> = tokens
        .iter()
        .filter_map(|t| {
            let idx = vocab.index(t.as_ref());
            if idx.is_none() {
                oov += 1;
            }
            idx
        })
        .collect();
    indices.sort_unstable();
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for i in indices {
        match pairs.last_mut() {
            Some((last, count)) if *last == i => *count += 1,
            _ => pairs.push((i, 1)),
        }
    }
    CountVector {
        total_tokens: pairs.iter().map(|&(_, n)| u64::from(n)).sum(),
        pairs,
        oov_tokens: oov,
    }
}
