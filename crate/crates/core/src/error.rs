//! Crate-wide error type.
//!
//! One enum covers the whole pipeline so the CLI can map any failure to a
//! stable machine-parsable code (the variant name).

use thiserror::Error;

/// All failure modes of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed WAV input (bad header, truncated chunks, inconsistent sizes).
    #[error("decode error: {0}")]
    DecodeError(String),
    /// Structurally valid WAV we deliberately do not handle (codec, bit depth, channel count).
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    /// Audio shorter than an operation requires.
    #[error("insufficient audio: {0}")]
    InsufficientAudio(String),
    /// Externally provided stems do not match the segment they claim to split.
    #[error("stem mismatch: {0}")]
    StemMismatch(String),
    /// A config value is out of its legal range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    /// Tensor/layer dimensions do not agree.
    #[error("shape error: {0}")]
    ShapeError(String),
    /// Class label outside 0..classes.
    #[error("label error: {0}")]
    LabelError(String),
    /// Empty, mismatched, or non-finite input data.
    #[error("data error: {0}")]
    DataError(String),
    /// Training produced a non-finite loss.
    #[error("divergence: {0}; try a lower learning rate")]
    DivergenceError(String),
    /// A stratified split left some class without samples on one side.
    #[error("stratification error: {0}")]
    StratificationError(String),
    /// Invalid run configuration (CLI/ensemble level).
    #[error("config error: {0}")]
    ConfigError(String),
    /// Corpus directory layout does not match the expected genre structure.
    #[error("layout error: {0}")]
    LayoutError(String),
    /// A pipeline stage is missing an artifact from an earlier stage, or
    /// artifacts from different configs are being mixed.
    #[error("pipeline error: {0}")]
    PipelineError(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable error code for machine-parsable CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DecodeError(_) => "DecodeError",
            Error::UnsupportedFormat(_) => "UnsupportedFormat",
            Error::InsufficientAudio(_) => "InsufficientAudio",
            Error::StemMismatch(_) => "StemMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ShapeError(_) => "ShapeError",
            Error::LabelError(_) => "LabelError",
            Error::DataError(_) => "DataError",
            Error::DivergenceError(_) => "DivergenceError",
            Error::StratificationError(_) => "StratificationError",
            Error::ConfigError(_) => "ConfigError",
            Error::LayoutError(_) => "LayoutError",
            Error::PipelineError(_) => "PipelineError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
