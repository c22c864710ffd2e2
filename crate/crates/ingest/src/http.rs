use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use gateway_core::{DataPoint, Inlet, Timestamp};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use tokio::sync::watch;
use tracing::warn;

use crate::binding::{map_fields, FieldMapping, TimestampField};
use crate::mqtt::stopped;
use crate::IngestError;

pub const MIN_HTTP_INTERVAL_SECS: f64 = 10.0;

/// Periodic authenticated GET of a JSON document holding one object per
/// entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpPollSpec {
    pub url: String,
    #[serde(default)]
    pub auth_header: Option<String>,
    #[serde(default)]
    pub auth_value: Option<String>,
    pub interval_secs: f64,
    /// JSON pointer to the array of entity objects; empty for the root.
    #[serde(default)]
    pub selector: String,
    /// Entity id template; `{/id}` is replaced by that pointer's value in
    /// each entity object.
    pub entity_id: String,
    pub field_map: Vec<FieldMapping>,
    #[serde(default)]
    pub timestamp: Option<TimestampField>,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    10_000
}

impl HttpPollSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::InvalidBinding(format!("http poll `{}`: {m}", self.url)));
        match reqwest::Url::parse(&self.url) {
            Ok(u) if u.scheme() == "http" || u.scheme() == "https" => {}
            Ok(u) => return bad(format!("unsupported scheme `{}`", u.scheme())),
            Err(e) => return bad(e.to_string()),
        }
        if !(self.interval_secs >= MIN_HTTP_INTERVAL_SECS) {
            return bad(format!("interval_secs must be at least {MIN_HTTP_INTERVAL_SECS}"));
        }
        if self.field_map.is_empty() {
            return bad("field_map must not be empty".into());
        }
        if self.auth_header.is_some() != self.auth_value.is_some() {
            return bad("auth_header and auth_value go together".into());
        }
        if !self.selector.is_empty() && !self.selector.starts_with('/') {
            return bad("selector must be a JSON pointer".into());
        }
        Ok(())
    }

    fn entity_for(&self, obj: &Json) -> Option<String> {
        let mut out = String::new();
        let mut rest = self.entity_id.as_str();
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let end = rest[start..].find('}')? + start;
            let v = obj.pointer(&rest[start + 1..end])?;
            match v {
                Json::String(s) => out.push_str(s),
                Json::Number(n) => out.push_str(&n.to_string()),
                _ => return None,
            }
            rest = &rest[end + 1..];
        }
        out.push_str(rest);
        (!out.is_empty()).then_some(out)
    }

    /// Maps an already fetched document onto points.
    pub fn map_document(&self, doc: &Json, now: Timestamp) -> Result<Vec<DataPoint>, IngestError> {
        let selected = doc
            .pointer(&self.selector)
            .ok_or_else(|| IngestError::SchemaMismatch(format!("selector `{}` not found", self.selector)))?;
        let objects: Vec<&Json> = match selected {
            Json::Array(items) => items.iter().collect(),
            obj @ Json::Object(_) => vec![obj],
            _ => {
                return Err(IngestError::SchemaMismatch(format!(
                    "selector `{}` is neither an array nor an object",
                    self.selector
                )))
            }
        };
        if objects.is_empty() {
            return Err(IngestError::SchemaMismatch(format!(
                "selector `{}` yields no entities",
                self.selector
            )));
        }
        let mut points = Vec::new();
        for obj in objects {
            let Some(entity) = self.entity_for(obj) else {
                warn!(url = %self.url, "entity without id skipped");
                continue;
            };
            let parsed = map_fields(obj, &entity, &self.field_map, self.timestamp.as_ref(), &self.tags, now);
            points.extend(parsed.points);
        }
        Ok(points)
    }
}

/// Fetches the document once and maps it.
pub async fn poll_http(client: &reqwest::Client, spec: &HttpPollSpec) -> Result<Vec<DataPoint>, IngestError> {
    let mut req = client
        .get(&spec.url)
        .timeout(Duration::from_millis(spec.timeout_ms));
    if let (Some(name), Some(value)) = (&spec.auth_header, &spec.auth_value) {
        req = req.header(name.as_str(), value.as_str());
    }
    let resp = req.send().await.map_err(|e| IngestError::Http(e.to_string()))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(IngestError::HttpStatus(status.as_u16()));
    }
    let body = resp.bytes().await.map_err(|e| IngestError::Http(e.to_string()))?;
    let doc: Json = serde_json::from_slice(&body).map_err(|e| IngestError::MalformedJson(e.to_string()))?;
    spec.map_document(&doc, Timestamp::now())
}

/// Polls on the spec's interval until shutdown. Failures are logged and the
/// next interval retried.
pub async fn run_http_poller(spec: HttpPollSpec, inlet: Arc<dyn Inlet>, mut shutdown: watch::Receiver<bool>) {
    let client = reqwest::Client::new();
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(spec.interval_secs));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = ticker.tick() => {}
            _ = stopped(&mut shutdown) => return,
        }
        match poll_http(&client, &spec).await {
            Ok(points) => points.into_iter().for_each(|dp| inlet.submit(dp)),
            Err(e) => warn!(url = %spec.url, error = %e, "http poll failed"),
        }
    }
}
