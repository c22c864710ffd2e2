use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed JSON payload: {0}")]
    MalformedJson(String),
    #[error("topic `{topic}` does not match filter `{filter}`")]
    TemplateMismatch { topic: String, filter: String },
    #[error("invalid binding: {0}")]
    InvalidBinding(String),
    #[error("broker rejected the credentials: {0}")]
    AuthFailure(String),
    #[error("HTTP status {0}")]
    HttpStatus(u16),
    #[error("response does not match the configured schema: {0}")]
    SchemaMismatch(String),
    #[error("HTTP request failed: {0}")]
    Http(String),
}
