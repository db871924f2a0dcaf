use std::path::PathBuf;

use thiserror::Error;

/// Which half of the interpolated objective produced a bad value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Ranking,
    Contrastive,
}

impl std::fmt::Display for LossTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossTerm::Ranking => f.write_str("ranking"),
            LossTerm::Contrastive => f.write_str("contrastive"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty embedding file")]
    EmptyEmbeddings,

    #[error("no representable tokens")]
    NoRepresentableTokens,

    #[error("document {0} has no sentences")]
    NoSentences(String),

    #[error("negative pool for query {0} is empty")]
    EmptyNegativePool(String),

    #[error("query of {query_len} tokens does not fit max_len {max_len} (3 positions reserved)")]
    QueryTooLong { query_len: usize, max_len: usize },

    #[error("insufficient positives: need {needed} triples, found {found}")]
    InsufficientPositives { needed: usize, found: usize },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("non-finite {term} loss ({value})")]
    NonFiniteLoss { term: LossTerm, value: f64 },

    #[error("non-finite loss at step {step}: {source}")]
    TrainingDiverged {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
