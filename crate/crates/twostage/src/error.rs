use thiserror::Error;

/// Errors surfaced by validation, data loading, and the sampler.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid model parameters: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("data error at line {line}: {msg}")]
    Data { line: usize, msg: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("sampler fault for unit ({cluster}, {unit}): {msg}")]
    SamplerFault {
        cluster: String,
        unit: String,
        msg: String,
    },

    #[error("estimand error: {0}")]
    Estimand(String),

    #[error("simulation replication {replication} failed: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
