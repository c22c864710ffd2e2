use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Timestamp, Value, MAX_TEXT_LEN};

/// One timestamped measurement from one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub entity_id: String,
    pub parameter: String,
    pub value: Value,
    /// UCUM-style unit token, empty when the value is dimensionless.
    #[serde(default)]
    pub unit: String,
    pub timestamp: Timestamp,
    /// Metadata such as building or room, in insertion order.
    #[serde(default)]
    pub tags: Vec<(String, String)>,
}

impl DataPoint {
    pub fn new(
        entity_id: impl Into<String>,
        parameter: impl Into<String>,
        value: impl Into<Value>,
        timestamp: Timestamp,
    ) -> Self {
        DataPoint {
            entity_id: entity_id.into(),
            parameter: parameter.into(),
            value: value.into(),
            unit: String::new(),
            timestamp,
            tags: Vec::new(),
        }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    pub fn with_tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.push((key.into(), value.into()));
        self
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("value of `{field}` is not finite")]
    NonFiniteValue { field: &'static str },
    #[error("`{field}` must not be empty")]
    EmptyIdentifier { field: &'static str },
    #[error("tag key `{key}` appears more than once")]
    DuplicateTagKey { key: String },
    #[error("text value is {len} bytes, limit is {MAX_TEXT_LEN}")]
    TextTooLong { len: usize },
}

/// Checks every [`DataPoint`] invariant except per-series timestamp
/// monotonicity, which only the [`crate::ChangeFilter`] can see.
pub fn validate_datapoint(dp: &DataPoint) -> Result<(), ValidationError> {
    if dp.entity_id.is_empty() {
        return Err(ValidationError::EmptyIdentifier { field: "entity_id" });
    }
    if dp.parameter.is_empty() {
        return Err(ValidationError::EmptyIdentifier { field: "parameter" });
    }
    match &dp.value {
        Value::Real(v) if !v.is_finite() => {
            return Err(ValidationError::NonFiniteValue { field: "value" })
        }
        Value::Text(t) if t.len() > MAX_TEXT_LEN => {
            return Err(ValidationError::TextTooLong { len: t.len() })
        }
        _ => {}
    }
    let mut seen = HashSet::with_capacity(dp.tags.len());
    for (key, _) in &dp.tags {
        if key.is_empty() {
            return Err(ValidationError::EmptyIdentifier { field: "tag key" });
        }
        if !seen.insert(key.as_str()) {
            return Err(ValidationError::DuplicateTagKey { key: key.clone() });
        }
    }
    Ok(())
}
