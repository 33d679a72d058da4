use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize: every weight is zero")]
    AllZero,
    #[error("cannot normalize: weight {value} at index {index} is negative")]
    NegativeWeight { index: usize, value: f64 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("residual distribution is empty (target and draft agree everywhere)")]
    AllZeroResidual,
    #[error("token {token} is outside a vocabulary of size {vocab_size}")]
    VocabMismatch { token: u32, vocab_size: usize },
    #[error("context is empty")]
    EmptyContext,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("normal equations are singular; use a positive ridge")]
    SingularSystem,
    #[error("training data is degenerate: {0}")]
    DegenerateData(String),
    #[error("step count {steps} outside [1, {max}]")]
    StepsOutOfRange { steps: usize, max: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at `{key}`: {message}")]
    Schema { key: String, message: String },
    #[error("report has no `{0}` series")]
    MissingSeries(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Validation failures (bad config, bad flags, bad input files) as
    /// opposed to failures while an experiment runs.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::Schema { .. }
            | Error::InvalidParameter(_)
            | Error::Io { .. } => true,
            Error::Context { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
