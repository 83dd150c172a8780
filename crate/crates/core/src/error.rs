use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record references unknown prompt or response `{0}`")]
    DanglingReference(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("corpus has no prompts")]
    EmptyCorpus,
    #[error("scaling ratio must lie in (0, 1], got {0}")]
    InvalidScale(f64),
    #[error("fraction out of range: {0}")]
    InvalidFraction(f64),

    #[error("no input items")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no vector for id `{0}`")]
    MissingId(String),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("bad embedding file: {0}")]
    BadEmbeddingFile(String),

    #[error("cannot fit {k} clusters to {n} points")]
    TooManyClusters { k: usize, n: usize },
    #[error("input contains NaN or infinite values")]
    NonFiniteInput,
    #[error("selection fraction must lie in (0, 1], got {0}")]
    EtaOutOfRange(f64),
    #[error("invalid clustering parameter: {0}")]
    InvalidClusterParam(String),

    #[error("seed corpus has no (prompt, response) records")]
    EmptySeed,
    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),
    #[error("gradient contains NaN or infinite values")]
    NonFiniteGradient,
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("response `{0}` has no score")]
    UnscoredResponse(String),
    #[error("{features} features for {pairs} pairs (or ids out of order)")]
    FeaturePairMismatch { features: usize, pairs: usize },
    #[error("prompt `{0}` has fewer than two responses")]
    TooFewResponses(String),
    #[error("weights are undefined: {0}")]
    DegenerateWeights(String),
    #[error("prompt `{0}` has non-positive mean response similarity")]
    ZeroSimilarity(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("unknown id `{0}` in selection")]
    UnknownId(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
