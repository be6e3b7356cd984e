use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("loss {loss} is incompatible with output activation {activation}")]
    LossMismatch {
        loss: &'static str,
        activation: &'static str,
    },

    #[error("vanishing gradient: parameter gradient norm is zero")]
    VanishingGradient,

    #[error("replay memory is empty; the forgetting step must be skipped")]
    EmptyMemory,

    #[error("non-finite cost in {term} at task {task}, iteration {iteration}")]
    NonFiniteCost {
        term: &'static str,
        task: usize,
        iteration: usize,
    },

    #[error("IDX format error: {0}")]
    IdxFormat(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::LossMismatch { .. } => "loss_mismatch",
            Error::VanishingGradient => "vanishing_gradient",
            Error::EmptyMemory => "empty_memory",
            Error::NonFiniteCost { .. } => "non_finite_cost",
            Error::IdxFormat(_) => "idx_format",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
