use thiserror::Error;

/// Errors produced by the causal feature selection library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("degenerate treatment: {0}")]
    DegenerateTreatment(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty {0} group")]
    EmptyGroup(&'static str),

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("single-class labels: both classes are required")]
    SingleClass,

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("data leakage: {0}")]
    Leakage(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
