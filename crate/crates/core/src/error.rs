use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("symbol not in vocabulary at byte offset {offset}")]
    SymbolNotInVocabulary { offset: usize },

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),

    #[error("grammar parse error on line {line}: {message}")]
    GrammarParse { line: usize, message: String },

    #[error("corpus parse error on line {line}: {message}")]
    CorpusParse { line: usize, message: String },

    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    FeatureMismatch { expected: usize, actual: usize },

    #[error("drafter output cache is stale (parameters changed since forward)")]
    StaleCache,

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    CheckpointVersion { expected: String, found: String },

    #[error("checkpoint shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("corrupted checkpoint {path}: {message}")]
    CorruptCheckpoint { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
