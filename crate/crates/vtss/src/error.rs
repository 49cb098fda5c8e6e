use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte {offset}: {msg}")]
    Format { msg: String, offset: u64 },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("class {class} has {available} samples, {requested} requested")]
    Capacity {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("shard error: {0}")]
    Shard(String),

    #[error("config error at {pointer}: {msg}")]
    Config { pointer: String, msg: String },

    #[error("training failed at epoch {epoch}, step {step}: {msg}")]
    Training {
        epoch: usize,
        step: usize,
        msg: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn format(msg: impl Into<String>, offset: u64) -> Self {
        Error::Format {
            msg: msg.into(),
            offset,
        }
    }
}
