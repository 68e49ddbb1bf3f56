//! Unigram tokenization and vocabulary construction.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::{AuditError, Result};

pub type TokenSeq = Vec<String>;

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Lowercases `text` and splits it into maximal runs of letters and digits.
///
/// A single apostrophe (ASCII or U+2019, emitted as ASCII) joins two letters,
/// so "don't" stays one token. Every other character separates tokens.
pub fn tokenize(text: &str) -> TokenSeq {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.push(c);
            continue;
        }
        let joins = is_apostrophe(c)
            && i > 0
            && chars[i - 1].is_alphabetic()
            && chars.get(i + 1).is_some_and(|n| n.is_alphabetic());
        if joins {
            current.push('\'');
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Dense token ↔ index map with tokens in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_index: HashMap<String, u32>,
    index_to_token: Vec<String>,
}

impl Vocabulary {
    fn from_sorted(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(AuditError::EmptyVocabulary);
        }
        let token_to_index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            token_to_index,
            index_to_token: tokens,
        })
    }

    /// Builds the vocabulary of tokens occurring in at least `min_doc_freq` documents.
    pub fn build<'a, I, D>(docs: I, min_doc_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        if min_doc_freq == 0 {
            return Err(AuditError::InvalidParameter("min_doc_freq must be at least 1".into()));
        }
        let mut doc_freq: BTreeMap<&str, usize> = BTreeMap::new();
        let mut seen: Vec<&str> = Vec::new();
        for doc in docs {
            seen.clear();
            seen.extend(doc.into_iter().map(String::as_str));
            seen.sort_unstable();
            seen.dedup();
            for &t in &seen {
                *doc_freq.entry(t).or_insert(0) += 1;
            }
        }
        let tokens = doc_freq
            .into_iter()
            .filter(|&(_, df)| df >= min_doc_freq)
            .map(|(t, _)| t.to_string())
            .collect();
        Self::from_sorted(tokens)
    }

    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_token.is_empty()
    }

    pub fn index(&self, token: &str) -> Option<u32> {
        self.token_to_index.get(token).copied()
    }

    pub fn token(&self, index: u32) -> &str {
        &self.index_to_token[index as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.index_to_token
    }

    /// Newline-delimited token list; line `i` holds the token with index `i`.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for t in &self.index_to_token {
            let _ = writeln!(out, "{t}");
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.iter().any(String::is_empty) {
            return Err(AuditError::Malformed("vocabulary file contains an empty line".into()));
        }
        if tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AuditError::Malformed(
                "vocabulary tokens must be unique and sorted".into(),
            ));
        }
        Self::from_sorted(tokens)
    }

    /// SHA-256 of [`Vocabulary::to_lines`], hex encoded.
    pub fn fingerprint(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_lines().as_bytes()))
    }
}

/// Builds a vocabulary from training sequences.
pub fn build_vocabulary(docs: &[TokenSeq], min_doc_freq: usize) -> Result<Vocabulary> {
    Vocabulary::build(docs.iter(), min_doc_freq)
}
