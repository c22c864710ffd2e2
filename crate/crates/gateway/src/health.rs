//! Liveness state and the `/health` and `/metrics` endpoints.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use gateway_alerts::AlertStats;
use gateway_core::Timestamp;
use gateway_ingest::IngestStats;
use gateway_pipeline::{FlushStatus, Pipeline, PipelineStats, RateStats};
use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::watch;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DeviceHealth {
    pub last_success: Option<Timestamp>,
    pub consecutive_failures: u64,
    pub last_error: Option<String>,
}

impl DeviceHealth {
    pub fn status(&self) -> &'static str {
        match (self.last_success, self.consecutive_failures) {
            (_, n) if n >= 3 => "failing",
            (_, n) if n > 0 => "degraded",
            (None, _) => "pending",
            _ => "ok",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviceStatus {
    pub status: &'static str,
    #[serde(flatten)]
    pub health: DeviceHealth,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineHealth {
    pub buffered: u64,
    pub shed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HealthSnapshot {
    pub status: &'static str,
    pub uptime_secs: f64,
    pub devices: BTreeMap<String, DeviceStatus>,
    pub pipeline: PipelineHealth,
    pub sink: Option<FlushStatus>,
}

/// Shared between pollers, the daemon and the HTTP handlers. Every lock is
/// held only for a copy, so a slow sink or device never delays a probe.
pub struct HealthState {
    started: Instant,
    devices: Mutex<BTreeMap<String, DeviceHealth>>,
    pipeline: Arc<Pipeline>,
    alerts: Option<Arc<AlertStats>>,
    ingest: Mutex<Vec<Arc<IngestStats>>>,
    draining: AtomicBool,
}

impl HealthState {
    pub fn new(pipeline: Arc<Pipeline>, alerts: Option<Arc<AlertStats>>) -> Self {
        HealthState {
            started: Instant::now(),
            devices: Mutex::new(BTreeMap::new()),
            pipeline,
            alerts,
            ingest: Mutex::new(Vec::new()),
            draining: AtomicBool::new(false),
        }
    }

    pub fn register(&self, device: &str) {
        self.devices.lock().unwrap().entry(device.to_string()).or_default();
    }

    pub fn add_ingest(&self, stats: Arc<IngestStats>) {
        self.ingest.lock().unwrap().push(stats);
    }

    pub fn success(&self, device: &str, at: Timestamp) {
        let mut d = self.devices.lock().unwrap();
        let h = d.entry(device.to_string()).or_default();
        h.last_success = Some(h.last_success.map_or(at, |prev| prev.max(at)));
        h.consecutive_failures = 0;
        h.last_error = None;
    }

    pub fn failure(&self, device: &str, error: impl Into<String>) {
        let mut d = self.devices.lock().unwrap();
        let h = d.entry(device.to_string()).or_default();
        h.consecutive_failures += 1;
        h.last_error = Some(error.into());
    }

    pub fn device(&self, device: &str) -> Option<DeviceHealth> {
        self.devices.lock().unwrap().get(device).cloned()
    }

    pub fn set_draining(&self) {
        self.draining.store(true, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> HealthSnapshot {
        let devices: BTreeMap<String, DeviceStatus> = self
            .devices
            .lock()
            .unwrap()
            .iter()
            .map(|(k, h)| (k.clone(), DeviceStatus { status: h.status(), health: h.clone() }))
            .collect();
        let stats = self.pipeline.stats();
        let sink = self.pipeline.last_flush();
        let status = if self.draining.load(Ordering::Relaxed) {
            "draining"
        } else if sink.as_ref().is_some_and(|s| !s.ok) || devices.values().any(|d| d.status == "failing") {
            "degraded"
        } else {
            "ok"
        };
        HealthSnapshot {
            status,
            uptime_secs: self.started.elapsed().as_secs_f64(),
            devices,
            pipeline: PipelineHealth { buffered: stats.buffered, shed: stats.shed },
            sink,
        }
    }

    pub fn metrics(&self) -> Metrics {
        let ingest = self.ingest.lock().unwrap().clone();
        Metrics {
            uptime_secs: self.started.elapsed().as_secs_f64(),
            pipeline: self.pipeline.stats(),
            alerts: self.alerts.as_ref().map(|a| {
                let g = |c: &std::sync::atomic::AtomicU64| c.load(Ordering::Relaxed);
                json!({
                    "evaluated": g(&a.evaluated),
                    "fired": g(&a.fired),
                    "recovered": g(&a.recovered),
                    "disabled": g(&a.disabled),
                    "dropped": g(&a.dropped),
                    "delivered": g(&a.delivered),
                    "failed": g(&a.failed),
                })
            }),
            ingest: ingest
                .iter()
                .map(|s| {
                    json!({
                        "messages": IngestStats::get(&s.messages),
                        "points": IngestStats::get(&s.points),
                        "parse_errors": IngestStats::get(&s.parse_errors),
                    })
                })
                .collect(),
            rates: self.pipeline.rate_stats(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub uptime_secs: f64,
    pub pipeline: PipelineStats,
    pub alerts: Option<serde_json::Value>,
    pub ingest: Vec<serde_json::Value>,
    pub rates: RateStats,
}

#[derive(Clone)]
struct Ctx {
    state: Arc<HealthState>,
    token: Option<String>,
}

fn authorized(ctx: &Ctx, headers: &HeaderMap) -> bool {
    let Some(token) = &ctx.token else { return true };
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == token)
}

async fn health(State(ctx): State<Ctx>, headers: HeaderMap) -> Response {
    if !authorized(&ctx, &headers) {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    let snap = ctx.state.snapshot();
    let code = if snap.status == "ok" { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (code, Json(snap)).into_response()
}

async fn metrics(State(ctx): State<Ctx>, headers: HeaderMap) -> Response {
    if !authorized(&ctx, &headers) {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    Json(ctx.state.metrics()).into_response()
}

pub fn router(state: Arc<HealthState>, token: Option<String>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/metrics", get(metrics))
        .with_state(Ctx { state, token })
}

pub struct HealthServer {
    pub addr: SocketAddr,
    pub task: tokio::task::JoinHandle<()>,
}

/// Binds `addr` and serves until `shutdown` turns true.
pub async fn serve(
    addr: &str,
    state: Arc<HealthState>,
    token: Option<String>,
    mut shutdown: watch::Receiver<bool>,
) -> std::io::Result<HealthServer> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let app = router(state, token);
    let task = tokio::spawn(async move {
        let stop = async move {
            let _ = shutdown.wait_for(|s| *s).await;
        };
        if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(stop).await {
            tracing::error!(error = %e, "health endpoint failed");
        }
    });
    Ok(HealthServer { addr, task })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gateway_pipeline::PipelineOptions;

    #[test]
    fn device_status_follows_failures() {
        let h = HealthState::new(Arc::new(Pipeline::new(PipelineOptions::default())), None);
        h.register("m1");
        assert_eq!(h.snapshot().devices["m1"].status, "pending");
        h.success("m1", Timestamp::from_secs(10));
        assert_eq!(h.snapshot().devices["m1"].status, "ok");
        for _ in 0..3 {
            h.failure("m1", "connection refused");
        }
        let s = h.snapshot();
        assert_eq!(s.devices["m1"].status, "failing");
        assert_eq!(s.devices["m1"].health.consecutive_failures, 3);
        assert_eq!(s.devices["m1"].health.last_success, Some(Timestamp::from_secs(10)));
        assert_eq!(s.status, "degraded");
        h.success("m1", Timestamp::from_secs(5));
        assert_eq!(h.device("m1").unwrap().last_success, Some(Timestamp::from_secs(10)));
    }
}
