use thiserror::Error;

/// Errors raised by the sampler, estimators and I/O layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BartError {
    #[error("outcome is constant; the leaf prior cannot be calibrated")]
    ConstantOutcome,
    #[error("exposure is not binary")]
    NotBinary,
    #[error("exposure arm {0} has no units")]
    EmptyArm(u8),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid chain configuration: {0}")]
    InvalidChainConfig(String),
    #[error("no tree move is applicable")]
    NoApplicableMove,
    #[error("no terminal node can be split")]
    NoGrowableNode,
    #[error("splitting simplex is degenerate")]
    DegenerateSimplex,
    #[error("trace was produced by the {found} scheme, expected {expected}")]
    SchemeMismatch { expected: String, found: String },
    #[error("exposure value {value} is outside the observed range [{low}, {high}]")]
    OutOfSupport { value: f64, low: f64, high: f64 },
    #[error("exposure grid is empty")]
    EmptyGrid,
    #[error("trace is empty")]
    EmptyTrace,
    #[error("variable set nesting violated: {0}")]
    SetNesting(String),
    #[error("chains have mismatched or too short lengths: {0}")]
    ChainLengthMismatch(String),
    #[error("operation is not supported for a binary exposure: {0}")]
    UnsupportedForBinary(String),
    #[error("operation requires a binary exposure: {0}")]
    UnsupportedForContinuous(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("cannot parse value at row {row}, column `{col}`")]
    ParseError { row: usize, col: String },
    #[error("missing value at row {row}, column `{col}`")]
    MissingValue { row: usize, col: String },
    #[error("exposure value {value} at row {row} is not 0 or 1")]
    ExposureDomainError { row: usize, value: f64 },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<BartError>,
    },
    #[error("I/O error: {0}")]
    Io(String),
}

impl BartError {
    /// Stable machine-readable code used by the command line front end.
    pub fn code(&self) -> &'static str {
        match self {
            BartError::ConstantOutcome => "ConstantOutcome",
            BartError::NotBinary => "NotBinary",
            BartError::EmptyArm(_) => "EmptyArm",
            BartError::InvalidDataset(_) => "InvalidDataset",
            BartError::InvalidHyperparams(_) => "InvalidHyperparams",
            BartError::InvalidChainConfig(_) => "InvalidChainConfig",
            BartError::NoApplicableMove => "NoApplicableMove",
            BartError::NoGrowableNode => "NoGrowableNode",
            BartError::DegenerateSimplex => "DegenerateSimplex",
            BartError::SchemeMismatch { .. } => "SchemeMismatch",
            BartError::OutOfSupport { .. } => "OutOfSupport",
            BartError::EmptyGrid => "EmptyGrid",
            BartError::EmptyTrace => "EmptyTrace",
            BartError::SetNesting(_) => "SetNesting",
            BartError::ChainLengthMismatch(_) => "ChainLengthMismatch",
            BartError::UnsupportedForBinary(_) => "UnsupportedForBinary",
            BartError::UnsupportedForContinuous(_) => "UnsupportedForContinuous",
            BartError::MissingColumn(_) => "MissingColumn",
            BartError::ParseError { .. } => "ParseError",
            BartError::MissingValue { .. } => "MissingValue",
            BartError::ExposureDomainError { .. } => "ExposureDomainError",
            BartError::MissingArtifact(_) => "MissingArtifact",
            BartError::Config(_) => "Config",
            BartError::Replicate { source, .. } => source.code(),
            BartError::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for BartError {
    fn from(e: std::io::Error) -> Self {
        BartError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, BartError>;
