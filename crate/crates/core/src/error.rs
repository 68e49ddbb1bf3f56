use thiserror::Error;

/// Fatal conditions raised by the audit pipeline.
///
/// Row-level ingestion problems are not errors of this type; they are
/// collected in [`crate::corpus::RowError`] and the row is skipped.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("input is not valid UTF-8: {0}")]
    Encoding(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("duplicate essay_id {0:?}")]
    DuplicateEssayId(String),

    #[error("student {student_id:?} reports conflicting {field} values")]
    InconsistentStudent { student_id: String, field: &'static str },

    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("length mismatch: {predictions} predictions vs {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AuditError>;
