use stressmon_core::query::QueryError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid window: {0}")]
    BadWindow(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),
    #[error("prompt `{0}` has expired")]
    PromptExpired(String),
    #[error("prompt `{0}` was already answered")]
    AlreadyAnswered(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("storage error: {0}")]
    Storage(String),
    #[error(transparent)]
    Engine(#[from] QueryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    /// Stable machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::BadWindow(_) => "bad_window",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::UnknownSubject(_) => "unknown_subject",
            ServiceError::UnknownPrompt(_) => "unknown_prompt",
            ServiceError::PromptExpired(_) => "prompt_expired",
            ServiceError::AlreadyAnswered(_) => "already_answered",
            ServiceError::Config(_) => "config",
            ServiceError::Storage(_) => "storage",
            ServiceError::Engine(_) => "engine",
            ServiceError::Io(_) => "io",
        }
    }
}
