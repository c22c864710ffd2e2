use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("cannot bind {addr}: {reason}")]
    BindFailure { addr: String, reason: String },
    #[error("invalid value model: {0}")]
    Model(String),
    #[error("replay file {path}: {reason}")]
    Replay { path: String, reason: String },
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("mqtt: {0}")]
    Mqtt(String),
}
