use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt audio file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("manifest schema violation: {0}")]
    SchemaViolation(String),
    #[error("manifest boundaries are not strictly increasing at entry {index} ({track_id})")]
    NonMonotonicBoundaries { index: usize, track_id: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("input too short: {0}")]
    TooShort(String),
    #[error("empty beat interval {index}: beat spacing below one frame")]
    EmptyInterval { index: usize },
    #[error("feature `{0}` not present on both sides")]
    MissingFeature(&'static str),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no run of {run_length} consecutive diagonal steps in warping path")]
    NoStableRun { run_length: usize },
    #[error("length mismatch: {transitions} transitions vs {boundaries} boundaries")]
    LengthMismatch { transitions: usize, boundaries: usize },
    #[error("cue span of {beats} beats is below the minimum of {min}")]
    SpanTooShort { beats: usize, min: usize },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("track {0} has no audio")]
    MissingAudio(String),
    #[error("feature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
