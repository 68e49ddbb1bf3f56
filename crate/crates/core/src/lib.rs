//! Demographic-leakage auditing for essay corpora.
//!
//! The pipeline ingests essay records, builds per-task labeled corpora
//! (binary gender, above/below-median household income), tokenizes them
//! into unigram counts, and measures how well three classifiers recover
//! the demographic label under student-level k-fold cross-validation.
//! Naive Bayes parameters additionally yield frequency-ratio word tables.
//!
//! ```text
//! ingest -> filter_min_length -> build_*_corpus -> make_folds
//!        -> (tokenize, build_vocabulary, vectorize) per fold
//!        -> nb / lr / mlp / zero-rule -> metrics -> report
//! ```

pub mod corpus;
pub mod error;
pub mod eval;
pub mod json;
pub mod linear;
pub mod mlp;
pub mod nb;
pub mod report;
mod rng;
pub mod synth;
pub mod tokenizer;
pub mod training;
pub mod vectorizer;

pub use error::{AuditError, Result};

/// Binary class index. Class 0 is Male / BelowMedian, class 1 is Female / AboveMedian.
pub type Label = u8;
