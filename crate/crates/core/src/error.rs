use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("seed particle {index} lies outside the support of the previous target")]
    SeedOutsideSupport { index: usize },

    #[error(
        "total degeneracy at iteration {iteration}: every snippet weight is zero; \
         try a smaller tempering step (higher ess_target) or a smaller stepsize"
    )]
    Degenerate { iteration: usize },

    #[error("snippet {index} has no finite weight")]
    EmptySnippet { index: usize },

    #[error("schedule stalled: iteration cap of {cap} reached at gamma = {gamma}")]
    IterationCap { cap: usize, gamma: f64 },

    #[error("covariance is not positive definite after diagonal loading")]
    NotPositiveDefinite,

    #[error("instance too large to enumerate ({outcomes} outcomes)")]
    TooLarge { outcomes: f64 },

    #[error("{path}: line {line}: {message}")]
    Data { path: PathBuf, line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
