//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty data")]
    EmptyData,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("prior mismatch: {0}")]
    PriorMismatch(String),

    #[error("model file version mismatch: {0}")]
    VersionMismatch(String),

    #[error("corrupt model file: {0}")]
    CorruptFile(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("fit failed in stage `{stage}`: {source}")]
    FitStage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::FitStage {
            stage,
            source: Box::new(self),
        }
    }
}
