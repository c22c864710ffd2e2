//! Points-per-hour accounting grouped by device kind.

use std::collections::BTreeMap;

use gateway_core::Timestamp;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRate {
    pub entity_id: String,
    pub kind: String,
    pub params: usize,
    pub received: u64,
    /// Points that passed the change filter.
    pub emitted: u64,
    pub first: Option<Timestamp>,
    pub last: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStats {
    pub devices: Vec<DeviceRate>,
    pub window_start: Timestamp,
    pub window_end: Timestamp,
}

impl RateStats {
    pub fn window_secs(&self) -> f64 {
        self.window_end.nanos_since(self.window_start) as f64 / 1e9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub device_kind: String,
    pub n_devices: usize,
    /// Mean over the group; for the total row, the sum over groups.
    pub params_per_device: f64,
    pub total_params: usize,
    pub avg_points_per_hour: f64,
    /// `None` on the total row.
    pub avg_points_per_hour_per_device: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("rate window must be positive, got {0} s")]
    EmptyWindow(f64),
}

pub const TOTAL_KIND: &str = "Total";

/// One row per device kind, sorted by kind, followed by a total row that is
/// the column sum of the rows above it.
pub fn report_rates(stats: &RateStats, window_secs: f64) -> Result<Vec<RateRow>, RateError> {
    if !(window_secs.is_finite() && window_secs > 0.0) {
        return Err(RateError::EmptyWindow(window_secs));
    }
    let hours = window_secs / 3600.0;
    let mut groups: BTreeMap<&str, (usize, usize, u64)> = BTreeMap::new();
    for d in &stats.devices {
        let g = groups.entry(d.kind.as_str()).or_default();
        g.0 += 1;
        g.1 += d.params;
        g.2 += d.emitted;
    }
    let mut rows: Vec<RateRow> = groups
        .into_iter()
        .map(|(kind, (n, params, emitted))| {
            let per_hour = emitted as f64 / hours;
            RateRow {
                device_kind: kind.to_string(),
                n_devices: n,
                params_per_device: params as f64 / n as f64,
                total_params: params,
                avg_points_per_hour: per_hour,
                avg_points_per_hour_per_device: Some(per_hour / n as f64),
            }
        })
        .collect();
    rows.push(total_row(&rows));
    Ok(rows)
}

pub fn total_row(rows: &[RateRow]) -> RateRow {
    RateRow {
        device_kind: TOTAL_KIND.into(),
        n_devices: rows.iter().map(|r| r.n_devices).sum(),
        params_per_device: rows.iter().map(|r| r.params_per_device).sum(),
        total_params: rows.iter().map(|r| r.total_params).sum(),
        avg_points_per_hour: rows.iter().map(|r| r.avg_points_per_hour).sum(),
        avg_points_per_hour_per_device: None,
    }
}

/// Fixed-width text rendering of a rate report.
pub fn format_rates(rows: &[RateRow]) -> String {
    let mut out = format!(
        "{:<28} {:>8} {:>8} {:>8} {:>12} {:>12}\n",
        "device kind", "devices", "params", "total", "points/h", "per device"
    );
    for r in rows {
        let per = r
            .avg_points_per_hour_per_device
            .map(|v| format!("{v:.2}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{:<28} {:>8} {:>8} {:>8} {:>12.2} {:>12}\n",
            r.device_kind,
            r.n_devices,
            trim_float(r.params_per_device),
            r.total_params,
            r.avg_points_per_hour,
            per
        ));
    }
    out
}

fn trim_float(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
