use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] sedst_autodiff::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: schema violation in {}", fields.join(", "))]
    Schema { line: usize, fields: Vec<String> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corpus generation: {0}")]
    Generation(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("degenerate distribution: {0}")]
    Degenerate(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("vocabulary mismatch: checkpoint {checkpoint}, corpus {corpus}")]
    VocabMismatch { checkpoint: String, corpus: String },
    #[error("empty batch")]
    EmptyBatch,
}
