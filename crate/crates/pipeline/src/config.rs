use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SinkMode {
    Http,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total tries per batch, including the first.
    pub attempts: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff_ms: 200,
            max_backoff_ms: 5000,
        }
    }
}

impl RetryPolicy {
    /// Delay before try number `attempt + 1`, doubling from `backoff_ms`.
    pub fn delay_ms(&self, attempt: u32) -> u64 {
        let shift = attempt.saturating_sub(1).min(20);
        self.backoff_ms.saturating_mul(1 << shift).min(self.max_backoff_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkConfig {
    pub mode: SinkMode,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_batch_points")]
    pub batch_max_points: usize,
    #[serde(default = "default_batch_age")]
    pub batch_max_age_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default)]
    pub dead_letter: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_batch_points() -> usize {
    5000
}
fn default_batch_age() -> u64 {
    1000
}
fn default_capacity() -> usize {
    100_000
}
fn default_timeout() -> u64 {
    10_000
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SinkConfigError {
    #[error("batch_max_points must be at least 1")]
    EmptyBatch,
    #[error("buffer_capacity {capacity} is smaller than batch_max_points {batch}")]
    CapacityBelowBatch { capacity: usize, batch: usize },
    #[error("retry.attempts must be at least 1")]
    NoAttempts,
    #[error("http sink needs a url")]
    MissingUrl,
    #[error("url `{0}` is not http or https")]
    BadUrl(String),
    #[error("file sink needs a path")]
    MissingPath,
    #[error("batch_max_age_ms and timeout_ms must be positive")]
    ZeroDuration,
}

impl SinkConfig {
    pub fn http(url: impl Into<String>, token: Option<String>) -> Self {
        SinkConfig {
            mode: SinkMode::Http,
            url: Some(url.into()),
            token,
            path: None,
            batch_max_points: default_batch_points(),
            batch_max_age_ms: default_batch_age(),
            retry: RetryPolicy::default(),
            buffer_capacity: default_capacity(),
            dead_letter: None,
            timeout_ms: default_timeout(),
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> Self {
        SinkConfig {
            mode: SinkMode::File,
            url: None,
            path: Some(path.into()),
            ..SinkConfig::http("", None)
        }
    }

    pub fn validate(&self) -> Vec<SinkConfigError> {
        let mut errs = Vec::new();
        if self.batch_max_points == 0 {
            errs.push(SinkConfigError::EmptyBatch);
        }
        if self.buffer_capacity < self.batch_max_points {
            errs.push(SinkConfigError::CapacityBelowBatch {
                capacity: self.buffer_capacity,
                batch: self.batch_max_points,
            });
        }
        if self.retry.attempts == 0 {
            errs.push(SinkConfigError::NoAttempts);
        }
        if self.batch_max_age_ms == 0 || self.timeout_ms == 0 {
            errs.push(SinkConfigError::ZeroDuration);
        }
        match self.mode {
            SinkMode::Http => match self.url.as_deref() {
                None | Some("") => errs.push(SinkConfigError::MissingUrl),
                Some(u) if !(u.starts_with("http://") || u.starts_with("https://")) => {
                    errs.push(SinkConfigError::BadUrl(u.to_string()))
                }
                _ => {}
            },
            SinkMode::File => {
                if self.path.as_ref().map_or(true, |p| p.as_os_str().is_empty()) {
                    errs.push(SinkConfigError::MissingPath);
                }
            }
        }
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_must_hold_a_batch() {
        let mut c = SinkConfig::file("/tmp/x.lp");
        c.batch_max_points = 100;
        c.buffer_capacity = 10;
        assert_eq!(
            c.validate(),
            vec![SinkConfigError::CapacityBelowBatch { capacity: 10, batch: 100 }]
        );
        c.batch_max_points = 0;
        assert!(c.validate().contains(&SinkConfigError::EmptyBatch));
    }

    #[test]
    fn http_needs_url() {
        assert_eq!(SinkConfig::http("", None).validate(), vec![SinkConfigError::MissingUrl]);
        assert!(SinkConfig::http("http://db:8086/api/v2/write", None).validate().is_empty());
        assert!(matches!(SinkConfig::http("db:8086", None).validate()[0], SinkConfigError::BadUrl(_)));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let r = RetryPolicy { attempts: 5, backoff_ms: 100, max_backoff_ms: 350 };
        assert_eq!([r.delay_ms(1), r.delay_ms(2), r.delay_ms(3)], [100, 200, 350]);
    }

    #[test]
    fn yaml_defaults() {
        let c: SinkConfig = serde_json::from_str(r#"{"mode":"file","path":"out.lp"}"#).unwrap();
        assert_eq!(c.retry, RetryPolicy::default());
        assert!(c.validate().is_empty());
    }
}
