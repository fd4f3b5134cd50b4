use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid acquisition parameters: {0}")]
    InvalidParams(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid property value: {0}")]
    InvalidProperty(String),
    #[error("degenerate intensity range")]
    DegenerateRange,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unidentifiable: no observations and zero prior weight")]
    Unidentifiable,
    #[error("no experts")]
    NoExperts,
    #[error("image too small: {0}")]
    TooSmall(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
