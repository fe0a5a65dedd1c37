use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate patient id `{0}`")]
    DuplicatePatient(String),
    #[error("patient sets are not aligned: {0}")]
    Misaligned(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag for the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Parse { .. } => "parse",
            Error::DuplicatePatient(_) => "duplicate_patient",
            Error::Misaligned(_) => "misaligned",
            Error::Shape(_) => "shape",
            Error::Degenerate(_) => "degenerate",
            Error::RankDeficient => "rank_deficient",
            Error::NonFinite(_) => "non_finite",
            Error::VocabularyMismatch(_) => "vocabulary_mismatch",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
