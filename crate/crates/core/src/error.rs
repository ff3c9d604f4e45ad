use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("detector unavailable: {0}")]
    DetectorUnavailable(String),

    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("bad frame encoding: {0}")]
    FrameEncoding(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
