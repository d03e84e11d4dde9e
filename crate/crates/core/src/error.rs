use std::path::PathBuf;

/// Configuration and argument errors raised by genome-level operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenomeError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluator `{evaluator}` cannot handle search space `{space}`: {reason}")]
    Incompatible {
        evaluator: String,
        space: String,
        reason: String,
    },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("unknown weight handle {0}")]
    UnknownHandle(u64),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Nn(#[from] immunecs_nn::NnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {needed} paired samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Top-level error for search runs, experiments and persistence.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unknown {kind} `{name}` (available: {available})")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl Error {
    /// True for bad configuration or arguments, as opposed to failures while
    /// evaluating, training or reading data.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Genome(_)
                | Error::Eval(EvalError::Genome(_) | EvalError::Incompatible { .. })
                | Error::Argument(_)
                | Error::Unknown { .. }
                | Error::Json { .. }
        )
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
