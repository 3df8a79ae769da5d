use thiserror::Error;

/// Error type shared across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("MalformedHeader: {0}")]
    MalformedHeader(String),
    #[error("UnsupportedEncoding: {0}")]
    UnsupportedEncoding(String),
    #[error("EmptyAudio")]
    EmptyAudio,
    #[error("AudioTooShort: need at least {need} samples/frames, got {got}")]
    AudioTooShort { need: usize, got: usize },
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("EmptyCurve")]
    EmptyCurve,
    #[error("WeightNotNormalized: weights sum to {0}")]
    WeightNotNormalized(f64),
    #[error("AllZeroConditioning")]
    AllZeroConditioning,
    #[error("UnknownVariant: {0}")]
    UnknownVariant(String),
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("UtteranceTooShort: {got} frames, minimum {need}")]
    UtteranceTooShort { need: usize, got: usize },
    #[error("LabelOutOfRange: label {label} with {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("EmptyDataset")]
    EmptyDataset,
    #[error("ZeroVector")]
    ZeroVector,
    #[error("DegenerateTrials: {0}")]
    DegenerateTrials(String),
    #[error("LengthMismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ParseError: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
