//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus parse error at line {line}, column {column}: {message}")]
    CorpusParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus has {0} sentence(s); at least 2 are required to split")]
    TooFewSentences(usize),

    #[error("test fraction {0} is outside the open interval (0, 1)")]
    InvalidFraction(f64),

    #[error("tag map parse error at line {line}: {message}")]
    TagMapParse { line: usize, message: String },

    #[error("word or tag not in lexicon: {0}")]
    LexiconMismatch(String),

    #[error("tag {0:?} has no outgoing transition events")]
    ZeroOutgoingEvents(String),

    #[error("probability vector invalid: {0}")]
    InvalidProbVector(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("smoothing strength alpha must be positive, got {0}")]
    InvalidAlpha(f64),

    #[error("no count rows with at least one event")]
    EmptyCountRows,

    #[error("unknown category id {0}")]
    UnknownCategory(usize),

    #[error("no lexicalized count row for category {category} word {word}")]
    MissingLexRow { category: usize, word: usize },

    #[error("category {0} has split states but no residual row")]
    MissingResidualRow(usize),

    #[error("duplicate split entry for category {category} word {word}")]
    DuplicateSplit { category: usize, word: usize },

    #[error("split entry not backed by model data: category {category} word {word}")]
    SplitWithoutData { category: usize, word: usize },

    #[error("empty input sequence")]
    EmptyInput,

    #[error("sequence length {len} exceeds brute-force limit {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("length mismatch: {words} words vs {tags} tags")]
    LengthMismatch { words: usize, tags: usize },

    #[error("gold corpus and predictions are misaligned: {0}")]
    Misaligned(String),

    #[error("empty correctness vectors")]
    EmptyCorrectness,

    #[error("sweep grid must be sorted ascending and start at 0")]
    InvalidGrid,

    #[error("model file error in section {section} at line {line}: {message}")]
    ModelFormat {
        section: String,
        line: usize,
        message: String,
    },

    #[error("model file version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Cli(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
