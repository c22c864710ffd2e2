//! InfluxDB line protocol serialization.

use std::collections::BTreeMap;
use std::fmt::Write;

use gateway_core::{DataPoint, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LineError {
    #[error("record has no fields")]
    NoFields,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("newline in {0}")]
    Newline(&'static str),
    #[error("measurement starts with `#` and would read as a comment")]
    CommentMeasurement,
    #[error("field `{0}` is not finite")]
    NonFinite(String),
    #[error("fields `{0}` and `{1}` normalize to the same key")]
    DuplicateField(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineRecord {
    pub measurement: String,
    pub tags: BTreeMap<String, String>,
    pub fields: BTreeMap<String, Value>,
    /// Nanoseconds since the Unix epoch.
    pub timestamp: i64,
}

/// Field key as written: lowercase ASCII alphanumerics separated by single
/// underscores, e.g. `VOC level` becomes `voc_level`.
pub fn normalize_key(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for c in name.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.is_empty() && !out.ends_with('_') {
            out.push('_');
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    out
}

fn escape(out: &mut String, s: &str, specials: &[char]) {
    for c in s.chars() {
        if c == '\\' || specials.contains(&c) {
            out.push('\\');
        }
        out.push(c);
    }
}

fn check(s: &str, what: &'static str) -> Result<(), LineError> {
    if s.is_empty() {
        return Err(LineError::Empty(what));
    }
    if s.contains('\n') || s.contains('\r') {
        return Err(LineError::Newline(what));
    }
    Ok(())
}

/// Shortest decimal that parses back to the same `f64`. Very large and very
/// small magnitudes use exponent notation.
pub fn format_real(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn field_value(out: &mut String, key: &str, v: &Value) -> Result<(), LineError> {
    match v {
        Value::Real(r) => {
            if !r.is_finite() {
                return Err(LineError::NonFinite(key.to_string()));
            }
            out.push_str(&format_real(*r));
        }
        Value::Flag(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Text(s) => {
            if s.contains('\n') || s.contains('\r') {
                return Err(LineError::Newline("text field"));
            }
            out.push('"');
            for c in s.chars() {
                if c == '"' || c == '\\' {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push('"');
        }
    }
    Ok(())
}

/// Serializes one record without a trailing newline.
pub fn to_line(rec: &LineRecord) -> Result<String, LineError> {
    if rec.fields.is_empty() {
        return Err(LineError::NoFields);
    }
    check(&rec.measurement, "measurement")?;
    if rec.measurement.starts_with('#') {
        return Err(LineError::CommentMeasurement);
    }
    let mut out = String::with_capacity(64);
    escape(&mut out, &rec.measurement, &[',', ' ']);
    for (k, v) in &rec.tags {
        check(k, "tag key")?;
        check(v, "tag value")?;
        out.push(',');
        escape(&mut out, k, &[',', '=', ' ']);
        out.push('=');
        escape(&mut out, v, &[',', '=', ' ']);
    }
    let mut seen: BTreeMap<String, &str> = BTreeMap::new();
    let mut first = true;
    for (name, v) in &rec.fields {
        let key = normalize_key(name);
        if key.is_empty() {
            return Err(LineError::Empty("field key"));
        }
        if let Some(prev) = seen.insert(key.clone(), name) {
            return Err(LineError::DuplicateField(prev.to_string(), name.clone()));
        }
        out.push(if first { ' ' } else { ',' });
        first = false;
        out.push_str(&key);
        out.push('=');
        field_value(&mut out, &key, v)?;
    }
    write!(out, " {}", rec.timestamp).expect("write to String");
    Ok(out)
}

/// Maps a point to its record: the measurement is the normalized parameter
/// name, the value goes into field `value`, and the device id, point tags
/// and unit become tags. Empty tag values are dropped.
pub fn record_from_point(dp: &DataPoint) -> LineRecord {
    let mut tags = BTreeMap::new();
    let flat = |s: &str| s.replace(['\n', '\r'], " ");
    for (k, v) in &dp.tags {
        if !k.is_empty() && !v.is_empty() {
            tags.insert(flat(k), flat(v));
        }
    }
    tags.insert("device".to_string(), flat(&dp.entity_id));
    if !dp.unit.is_empty() {
        tags.insert("unit".to_string(), flat(&dp.unit));
    }
    let value = match &dp.value {
        Value::Text(s) => Value::Text(flat(s)),
        v => v.clone(),
    };
    let mut measurement = normalize_key(&dp.parameter);
    if measurement.is_empty() {
        measurement = "value".into();
    }
    LineRecord {
        measurement,
        tags,
        fields: BTreeMap::from([("value".to_string(), value)]),
        timestamp: dp.timestamp.as_nanos(),
    }
}

pub fn point_to_line(dp: &DataPoint) -> Result<String, LineError> {
    to_line(&record_from_point(dp))
}
