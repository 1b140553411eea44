use std::path::PathBuf;

use crate::similarity::Dimension;

/// Errors raised across the feature, training and evaluation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input too short: {len} samples, need at least {needed}")]
    InputTooShort { len: usize, needed: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("manifest error at row {row}: {msg}")]
    Manifest { row: usize, msg: String },

    #[error("taxonomy error at row {row}: {msg}")]
    Taxonomy { row: usize, msg: String },

    #[error("no tempo detected")]
    NoTempo,

    #[error("no key detected (all-zero chroma)")]
    NoKey,

    #[error("track {track} has no data for dimension {dim}")]
    Unavailable { track: String, dim: Dimension },

    #[error("no similar pair available for dimension {0}")]
    Exhausted(Dimension),

    #[error("no negative candidates")]
    NoNegatives,

    #[error("batch construction failed: {0}")]
    Batch(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("numerics error: {0}")]
    Numerics(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("audio error in {path}: {msg}")]
    Audio { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
