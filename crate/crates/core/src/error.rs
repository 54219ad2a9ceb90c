use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or vector dimensions do not line up.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// A configuration value violates its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Input is degenerate for the requested operation (e.g. a zero vector
    /// cannot be normalized).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A cluster id outside `0..cluster_count` was passed to the dictionary.
    #[error("invalid cluster id {id} (dictionary holds {count} proxies)")]
    InvalidClusterId { id: usize, count: usize },

    /// Clustering produced no clusters, so no dictionary can be built.
    #[error("no clusters found: {0}")]
    EmptyDictionary(String),

    /// Non-finite value where a finite one is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Serialization parse failure.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
