//! Delivery of alert events: structured log, webhook and a mail spool.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use gateway_core::Value;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::mpsc;

use crate::engine::{AlertEvent, AlertStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Notifier {
    Log,
    Webhook {
        url: String,
        /// Body with `{rule}`, `{entity}`, `{parameter}`, `{kind}`, `{value}`
        /// and `{timestamp}` placeholders, each replaced by a JSON literal.
        #[serde(default)]
        template: Option<String>,
    },
    SmtpStub {
        spool_dir: PathBuf,
        #[serde(default = "default_from")]
        from: String,
        to: Vec<String>,
    },
}

fn default_from() -> String {
    "gateway@localhost".into()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NotifyError {
    #[error("webhook answered {0}")]
    HttpStatus(u16),
    #[error("webhook request failed: {0}")]
    Http(String),
    #[error("spool write failed: {0}")]
    Io(String),
    #[error("invalid notifier: {0}")]
    Config(String),
}

impl Notifier {
    pub fn validate(&self) -> Result<(), NotifyError> {
        match self {
            Notifier::Log => Ok(()),
            Notifier::Webhook { url, .. } => {
                if url.starts_with("http://") || url.starts_with("https://") {
                    Ok(())
                } else {
                    Err(NotifyError::Config(format!("webhook url `{url}` is not http or https")))
                }
            }
            Notifier::SmtpStub { spool_dir, to, .. } => {
                if spool_dir.as_os_str().is_empty() {
                    Err(NotifyError::Config("smtp_stub spool_dir is empty".into()))
                } else if to.is_empty() {
                    Err(NotifyError::Config("smtp_stub needs at least one recipient".into()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

fn rfc3339(ev: &AlertEvent) -> String {
    DateTime::<Utc>::from_timestamp_nanos(ev.timestamp.as_nanos()).to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)
}

fn value_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Real(r) => json!(r),
        Value::Flag(b) => json!(b),
        Value::Text(s) => json!(s),
    }
}

pub fn event_json(ev: &AlertEvent) -> serde_json::Value {
    json!({
        "rule": ev.rule,
        "entity": ev.entity,
        "parameter": ev.parameter,
        "kind": ev.kind.as_str(),
        "value": value_json(&ev.value),
        "timestamp": rfc3339(ev),
    })
}

pub fn render_template(template: &str, ev: &AlertEvent) -> String {
    let obj = event_json(ev);
    let mut out = template.to_string();
    for key in ["rule", "entity", "parameter", "kind", "value", "timestamp"] {
        out = out.replace(&format!("{{{key}}}"), &obj[key].to_string());
    }
    out
}

fn display_value(v: &Value) -> String {
    match v {
        Value::Real(r) => r.to_string(),
        Value::Flag(b) => b.to_string(),
        Value::Text(s) => s.clone(),
    }
}

/// RFC 822 style message for the spool directory.
pub fn render_mail(ev: &AlertEvent, from: &str, to: &[String], seq: u64) -> String {
    let when = DateTime::<Utc>::from_timestamp_nanos(ev.timestamp.as_nanos());
    let subject = format!(
        "[{}] {} on {}: {} = {}",
        ev.kind.as_str().to_uppercase(),
        ev.rule,
        ev.entity,
        ev.parameter,
        display_value(&ev.value)
    )
    .replace(['\r', '\n'], " ");
    format!(
        "From: {from}\r\nTo: {}\r\nSubject: {subject}\r\nDate: {}\r\nMessage-ID: <{}.{seq}@gateway>\r\nContent-Type: text/plain; charset=utf-8\r\n\r\n\
         Rule: {}\r\nEntity: {}\r\nParameter: {}\r\nEvent: {}\r\nValue: {}\r\nTime: {}\r\n",
        to.join(", "),
        when.to_rfc2822(),
        ev.timestamp.as_nanos(),
        ev.rule,
        ev.entity,
        ev.parameter,
        ev.kind.as_str(),
        display_value(&ev.value),
        rfc3339(ev),
    )
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub struct Dispatcher {
    client: reqwest::Client,
    seq: AtomicU64,
    retry_delay: Duration,
}

impl Default for Dispatcher {
    fn default() -> Self {
        Dispatcher::new(Duration::from_millis(500))
    }
}

impl Dispatcher {
    pub fn new(retry_delay: Duration) -> Self {
        Dispatcher {
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(10))
                .build()
                .expect("http client"),
            seq: AtomicU64::new(0),
            retry_delay,
        }
    }

    async fn post(&self, url: &str, body: &str) -> Result<(), NotifyError> {
        let resp = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .await
            .map_err(|e| NotifyError::Http(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(NotifyError::HttpStatus(resp.status().as_u16()))
        }
    }

    /// Delivers one event. Webhooks get one retry.
    pub async fn notify(&self, ev: &AlertEvent, notifier: &Notifier) -> Result<(), NotifyError> {
        match notifier {
            Notifier::Log => {
                tracing::warn!(
                    target: "alert",
                    rule = %ev.rule,
                    entity = %ev.entity,
                    parameter = %ev.parameter,
                    kind = ev.kind.as_str(),
                    value = %display_value(&ev.value),
                    timestamp = %rfc3339(ev),
                    "alert"
                );
                Ok(())
            }
            Notifier::Webhook { url, template } => {
                let body = match template {
                    Some(t) => render_template(t, ev),
                    None => event_json(ev).to_string(),
                };
                match self.post(url, &body).await {
                    Ok(()) => Ok(()),
                    Err(first) => {
                        tracing::debug!(error = %first, "webhook failed, retrying once");
                        tokio::time::sleep(self.retry_delay).await;
                        self.post(url, &body).await
                    }
                }
            }
            Notifier::SmtpStub { spool_dir, from, to } => {
                let seq = self.seq.fetch_add(1, Ordering::Relaxed);
                let name = format!(
                    "{}-{}-{}-{}-{seq}.eml",
                    ev.timestamp.as_nanos(),
                    file_safe(&ev.rule),
                    file_safe(&ev.entity),
                    ev.kind.as_str()
                );
                let msg = render_mail(ev, from, to, seq);
                std::fs::create_dir_all(spool_dir)
                    .and_then(|_| std::fs::write(spool_dir.join(name), msg))
                    .map_err(|e| NotifyError::Io(e.to_string()))
            }
        }
    }
}

/// Consumes events until the channel closes, fanning each out to every
/// notifier. Failures are counted and logged.
pub async fn run_notifiers(mut rx: mpsc::Receiver<AlertEvent>, notifiers: Vec<Notifier>, stats: Arc<AlertStats>) {
    let dispatcher = Dispatcher::default();
    while let Some(ev) = rx.recv().await {
        for n in &notifiers {
            match dispatcher.notify(&ev, n).await {
                Ok(()) => {
                    stats.delivered.fetch_add(1, Ordering::Relaxed);
                }
                Err(e) => {
                    stats.failed.fetch_add(1, Ordering::Relaxed);
                    tracing::error!(rule = %ev.rule, entity = %ev.entity, error = %e, "alert notification failed");
                }
            }
        }
    }
}
