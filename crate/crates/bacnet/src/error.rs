use thiserror::Error;

use crate::types::{abort_reason_name, error_code_name, reject_reason_name};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacnetError {
    #[error("empty query: at least one object with one property is required")]
    EmptyQuery,
    #[error("request of {size} bytes exceeds the {limit}-byte unsegmented limit")]
    TooLarge { size: usize, limit: usize },
    #[error("invoke id mismatch: expected {expected}, got {got}")]
    InvokeMismatch { expected: u8, got: u8 },
    #[error("request rejected: {}", reject_reason_name(*.0))]
    Reject(u8),
    #[error("request aborted: {}", abort_reason_name(*.0))]
    Abort(u8),
    #[error("device returned error class {class}, code {code} ({})", error_code_name(*.code))]
    ErrorPdu { class: u32, code: u32 },
    #[error("malformed datagram: {0}")]
    MalformedTag(String),
    #[error("no response from {target} after {attempts} attempts")]
    Timeout { target: String, attempts: u32 },
    #[error("discovery failed: {0}")]
    DiscoveryFailed(String),
    #[error("unknown object names: {}", .0.join(", "))]
    UnknownName(Vec<String>),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("socket error: {0}")]
    Io(String),
}

impl From<std::io::Error> for BacnetError {
    fn from(e: std::io::Error) -> Self {
        BacnetError::Io(e.to_string())
    }
}
