//! Crate error type.

use thiserror::Error;

/// Errors produced by pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("timestamp parse error in {context}: {value:?}")]
    Timestamp { context: String, value: String },

    #[error("modality registry invalid: {0}")]
    Registry(String),

    #[error("schema version mismatch: found {found}, supported {supported}")]
    SchemaVersion { found: u32, supported: u32 },

    #[error("corrupt input: {0}")]
    CorruptInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("requested {requested} components but data rank is {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("covariance not positive definite after regularization (component {component})")]
    SingularCovariance { component: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("empty input: {0}")]
    EmptyInput(String),
}
