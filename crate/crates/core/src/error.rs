use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate ad_id {0}")]
    DuplicateAdId(String),

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("registry row {row}: {message}")]
    Registry { row: usize, message: String },

    #[error("covariate error at (row {row}, col {column}): {message}")]
    Covariate {
        row: usize,
        column: String,
        message: String,
    },

    #[error("lexicon key {key} ({language}): {message}")]
    Lexicon {
        key: String,
        language: String,
        message: String,
    },

    #[error("{what} is missing ad_ids: {}", .ids.join(", "))]
    Coverage { what: String, ids: Vec<String> },

    #[error("invalid indicator matrix: {0}")]
    Matrix(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("rotation unidentified: no sign-anchored item is present in the matrix")]
    RotationUnidentified,

    #[error("non-finite log posterior contribution at parameter index {index}")]
    NonFinite { index: usize },

    #[error("optimizer diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("insufficient observations: n = {n} rows for p = {p} columns")]
    InsufficientObservations { n: usize, p: usize },

    #[error("rank-deficient design: column {0} is linearly dependent on earlier columns")]
    RankDeficient(String),

    #[error("model has no interaction term {var}:{moderator}")]
    MissingInteraction { var: String, moderator: String },

    #[error("unknown column {0}")]
    UnknownColumn(String),

    #[error("zero vector for ad {0}")]
    ZeroVector(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("need at least 2 scores, got {0}")]
    TooFewScores(usize),

    #[error("ad {0} has impressions but no score")]
    MissingScore(String),

    #[error("instance too large for validation sampler: {ads} ads exceeds limit {limit}")]
    Guardrail { ads: usize, limit: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// Coarse category used by the CLI exit path and the C ABI.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::DuplicateAdId(_)
            | Error::Parse { .. }
            | Error::Registry { .. }
            | Error::Covariate { .. }
            | Error::Lexicon { .. } => ErrorCategory::Input,
            Error::Coverage { .. }
            | Error::Matrix(_)
            | Error::Config(_)
            | Error::UnknownColumn(_)
            | Error::Dimension { .. }
            | Error::ZeroVector(_)
            | Error::MissingScore(_)
            | Error::TooFewScores(_)
            | Error::Guardrail { .. } => ErrorCategory::Validation,
            Error::RotationUnidentified
            | Error::NonFinite { .. }
            | Error::Divergence { .. }
            | Error::InsufficientObservations { .. }
            | Error::RankDeficient(_)
            | Error::MissingInteraction { .. } => ErrorCategory::Model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Input,
    Validation,
    Model,
}

impl std::fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorCategory::Io => "io",
            ErrorCategory::Input => "input",
            ErrorCategory::Validation => "validation",
            ErrorCategory::Model => "model",
        })
    }
}
