//! Batch delivery to an HTTP line-protocol endpoint or a local file.

use std::io::Write;
use std::sync::Arc;
use std::time::Duration;

use gateway_core::DataPoint;
use thiserror::Error;
use tokio::sync::watch;

use crate::config::{SinkConfig, SinkConfigError, SinkMode};
use crate::line::point_to_line;
use crate::pipeline::Pipeline;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlushOutcome {
    /// Delivered; `attempts` > 1 means transient failures were retried.
    Ack { attempts: u32 },
    /// Retries exhausted on transient errors.
    Failed { attempts: u32, reason: String },
    /// Rejected with a 4xx status and written to the dead-letter file.
    DeadLettered { status: u16 },
}

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("invalid sink config: {0:?}")]
    Config(Vec<SinkConfigError>),
    #[error("http client: {0}")]
    Client(String),
}

pub struct Sink {
    cfg: SinkConfig,
    client: reqwest::Client,
}

enum Attempt {
    Ok,
    Transient(String),
    Permanent(u16),
}

impl Sink {
    pub fn new(cfg: SinkConfig) -> Result<Self, SinkError> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(SinkError::Config(errs));
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| SinkError::Client(e.to_string()))?;
        Ok(Sink { cfg, client })
    }

    pub fn config(&self) -> &SinkConfig {
        &self.cfg
    }

    async fn post(&self, body: &str) -> Attempt {
        let url = self.cfg.url.as_deref().unwrap_or_default();
        let mut req = self
            .client
            .post(url)
            .header("content-type", "text/plain; charset=utf-8")
            .body(body.to_string());
        if let Some(token) = &self.cfg.token {
            req = req.header("authorization", format!("Token {token}"));
        }
        match req.send().await {
            Ok(resp) => {
                let s = resp.status();
                if s.is_success() {
                    Attempt::Ok
                } else if s.is_client_error() {
                    Attempt::Permanent(s.as_u16())
                } else {
                    Attempt::Transient(format!("status {}", s.as_u16()))
                }
            }
            Err(e) => Attempt::Transient(e.to_string()),
        }
    }

    fn append(&self, body: &str) -> Attempt {
        let path = self.cfg.path.as_ref().expect("validated file sink");
        let res = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| f.write_all(body.as_bytes()));
        match res {
            Ok(()) => Attempt::Ok,
            Err(e) => Attempt::Transient(e.to_string()),
        }
    }

    fn dead_letter(&self, status: u16, body: &str, n: usize) {
        let Some(path) = &self.cfg.dead_letter else {
            tracing::warn!(status, points = n, "batch rejected, no dead-letter file configured");
            return;
        };
        let header = format!(
            "# rejected status={status} points={n} at={}\n",
            chrono::Utc::now().to_rfc3339()
        );
        let res = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| f.write_all(format!("{header}{body}").as_bytes()));
        if let Err(e) = res {
            tracing::error!(error = %e, path = %path.display(), "dead-letter write failed");
        }
    }

    /// Sends newline-terminated lines as one request or one append.
    pub async fn flush_lines(&self, lines: &[String]) -> FlushOutcome {
        let mut body = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
        for l in lines {
            body.push_str(l);
            body.push('\n');
        }
        let retry = &self.cfg.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let res = match self.cfg.mode {
                SinkMode::Http => self.post(&body).await,
                SinkMode::File => self.append(&body),
            };
            match res {
                Attempt::Ok => return FlushOutcome::Ack { attempts: attempt },
                Attempt::Permanent(status) => {
                    self.dead_letter(status, &body, lines.len());
                    return FlushOutcome::DeadLettered { status };
                }
                Attempt::Transient(reason) => {
                    if attempt >= retry.attempts {
                        return FlushOutcome::Failed { attempts: attempt, reason };
                    }
                    tracing::debug!(attempt, %reason, "sink write failed, retrying");
                    tokio::time::sleep(Duration::from_millis(retry.delay_ms(attempt))).await;
                }
            }
        }
    }

    pub async fn flush(&self, batch: &[DataPoint]) -> FlushOutcome {
        let lines: Vec<String> = batch.iter().filter_map(|dp| point_to_line(dp).ok()).collect();
        if lines.is_empty() {
            return FlushOutcome::Ack { attempts: 0 };
        }
        self.flush_lines(&lines).await
    }
}

/// Drains one batch through the sink and updates the pipeline counters.
/// Returns false when the batch had to be requeued.
pub async fn flush_once(pipeline: &Pipeline, sink: &Sink, batch: Vec<DataPoint>) -> bool {
    let mut lines = Vec::with_capacity(batch.len());
    let mut bad = 0;
    for dp in &batch {
        match point_to_line(dp) {
            Ok(l) => lines.push(l),
            Err(e) => {
                bad += 1;
                tracing::warn!(entity = %dp.entity_id, parameter = %dp.parameter, error = %e, "point not serializable");
            }
        }
    }
    if bad > 0 {
        pipeline.record_dead_letter(bad);
    }
    if lines.is_empty() {
        return true;
    }
    match sink.flush_lines(&lines).await {
        FlushOutcome::Ack { .. } => {
            pipeline.record_flush(lines.len());
            true
        }
        FlushOutcome::DeadLettered { status } => {
            tracing::warn!(status, points = lines.len(), "batch quarantined");
            pipeline.record_rejected(status, lines.len());
            true
        }
        FlushOutcome::Failed { attempts, reason } => {
            tracing::warn!(attempts, %reason, points = batch.len(), "sink unavailable, batch requeued");
            pipeline.record_failure(&reason);
            pipeline.requeue(batch);
            false
        }
    }
}

/// Single flusher for one sink. Flushes when a full batch is buffered or
/// every `batch_max_age_ms`, and drains what it can on shutdown.
pub async fn run_flusher(pipeline: Arc<Pipeline>, sink: Sink, mut shutdown: watch::Receiver<bool>) {
    let max = sink.cfg.batch_max_points;
    let age = Duration::from_millis(sink.cfg.batch_max_age_ms);
    loop {
        let stop = tokio::select! {
            _ = pipeline.batch_ready() => false,
            _ = tokio::time::sleep(age) => false,
            _ = shutdown.wait_for(|s| *s) => true,
        };
        loop {
            let batch = pipeline.take_batch(max);
            if batch.is_empty() {
                break;
            }
            let full = batch.len() == max;
            if !flush_once(&pipeline, &sink, batch).await || (!full && !stop) {
                break;
            }
        }
        if stop {
            let left = pipeline.buffered();
            if left > 0 {
                tracing::warn!(points = left, "flusher stopped with undelivered points");
            }
            return;
        }
    }
}
