//! Points-per-hour reports from a running or finished gateway.

use std::path::Path;
use std::time::Duration;

use gateway_pipeline::{format_rates, report_rates, RateError, RateRow, RateStats};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error(transparent)]
    EmptyWindow(#[from] RateError),
    #[error("cannot read stats: {0}")]
    Source(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub window_secs: f64,
    pub rows: Vec<RateRow>,
}

impl StatsReport {
    pub fn table(&self) -> String {
        format_rates(&self.rows)
    }
}

pub fn parse_window(s: &str) -> Result<Duration, String> {
    humantime::parse_duration(s).map_err(|e| format!("bad window `{s}`: {e}"))
}

/// Rates over `window`, or over the span the counters cover when `None`.
pub fn cmd_stats(stats: &RateStats, window: Option<Duration>) -> Result<StatsReport, StatsError> {
    let window_secs = window.map_or_else(|| stats.window_secs(), |w| w.as_secs_f64());
    let rows = report_rates(stats, window_secs)?;
    Ok(StatsReport { window_secs, rows })
}

pub fn load_stats_file(path: &Path) -> Result<RateStats, StatsError> {
    let text = std::fs::read_to_string(path).map_err(|e| StatsError::Source(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| StatsError::Source(format!("{}: {e}", path.display())))
}

/// Reads the `rates` member of a gateway's `/metrics` document.
pub async fn fetch_stats(base_url: &str, token: Option<&str>) -> Result<RateStats, StatsError> {
    let url = format!("{}/metrics", base_url.trim_end_matches('/'));
    let mut req = reqwest::Client::new().get(&url).timeout(Duration::from_secs(5));
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let src = |e: reqwest::Error| StatsError::Source(format!("{url}: {e}"));
    let body = req.send().await.map_err(src)?.error_for_status().map_err(src)?.text().await.map_err(src)?;
    let bad = |e: serde_json::Error| StatsError::Source(format!("{url}: {e}"));
    let doc: serde_json::Value = serde_json::from_str(&body).map_err(bad)?;
    serde_json::from_value(doc["rates"].clone()).map_err(bad)
}
