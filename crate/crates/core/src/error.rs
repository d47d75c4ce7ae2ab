// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use crate::model::HeadIndex;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid weight file: {0}")]
    WeightFormat(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor `{0}` contains non-finite values")]
    NonFinite(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("sequence of {len} tokens exceeds max context {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("head {head} is outside a model with {n_layers} layers x {n_heads} heads")]
    InvalidHead {
        head: HeadIndex,
        n_layers: usize,
        n_heads: usize,
    },

    #[error("invalid head name `{0}` (expected L<layer>H<head>)")]
    HeadParse(String),

    #[error("invalid intervention on {head}: {reason}")]
    InvalidIntervention { head: HeadIndex, reason: String },

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("tokenizer data error: {0}")]
    Tokenizer(String),

    #[error("name `{0}` is not a single token (with leading space)")]
    MultiTokenName(String),

    #[error("duplicate name pair ({0}, {1})")]
    DuplicatePair(String, String),

    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),

    #[error("degenerate example {example_id}: |LD_clean - LD_corrupt| = {gap:e}")]
    DegenerateExample { example_id: usize, gap: f32 },

    #[error("example {example_id} is predicted incorrectly (LD_clean = {ld_clean})")]
    IncorrectPrediction { example_id: usize, ld_clean: f32 },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("requested {k} heads but the model only has {available}")]
    TooManyHeads { k: usize, available: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("explanation requires at least one cited head")]
    NoCitedHeads,

    #[error("explanation text is empty")]
    EmptyExplanation,

    #[error("LLM backend error: {0}")]
    Llm(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing input {path}; run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags the error with the pipeline stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// True when the error stems from user configuration rather than a failed computation.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::InvalidConfig(_) | Error::HeadParse(_) => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
