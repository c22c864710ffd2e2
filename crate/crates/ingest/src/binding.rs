//! Topic bindings and JSON payload mapping.

use std::collections::BTreeMap;

use chrono::DateTime;
use gateway_core::{DataPoint, Timestamp, Value, ValueKind};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::IngestError;

/// Maps one JSON value onto one gateway parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMapping {
    /// JSON pointer into the payload, e.g. `/co2` or `/sensors/0/value`.
    pub pointer: String,
    pub parameter: String,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub kind: ValueKind,
    #[serde(default)]
    pub scale: Option<f64>,
}

impl FieldMapping {
    pub fn new(pointer: impl Into<String>, parameter: impl Into<String>, unit: impl Into<String>) -> Self {
        FieldMapping {
            pointer: pointer.into(),
            parameter: parameter.into(),
            unit: unit.into(),
            kind: ValueKind::Real,
            scale: None,
        }
    }

    pub fn flag(mut self) -> Self {
        self.kind = ValueKind::Flag;
        self
    }

    pub fn text(mut self) -> Self {
        self.kind = ValueKind::Text;
        self
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = Some(scale);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    #[default]
    Seconds,
    Millis,
    Nanos,
    Rfc3339,
}

/// Device-supplied timestamp location. Without one, points carry the
/// receive time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimestampField {
    pub pointer: String,
    #[serde(default)]
    pub unit: TimeUnit,
}

impl TimestampField {
    pub fn read(&self, doc: &Json) -> Option<Timestamp> {
        let v = doc.pointer(&self.pointer)?;
        let nanos = match (self.unit, v) {
            (TimeUnit::Rfc3339, Json::String(s)) => DateTime::parse_from_rfc3339(s).ok()?.timestamp_nanos_opt()?,
            (TimeUnit::Seconds, Json::Number(n)) => {
                let s = n.as_f64()?;
                (s * 1e9).round() as i64
            }
            (TimeUnit::Millis, Json::Number(n)) => {
                if let Some(i) = n.as_i64() {
                    i.checked_mul(1_000_000)?
                } else {
                    (n.as_f64()? * 1e6).round() as i64
                }
            }
            (TimeUnit::Nanos, Json::Number(n)) => n.as_i64()?,
            _ => return None,
        };
        Some(Timestamp(nanos))
    }
}

/// Result of mapping one payload.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parsed {
    pub points: Vec<DataPoint>,
    /// Top-level payload fields no mapping refers to.
    pub ignored: usize,
    /// Mapped fields whose value could not be converted, with the reason.
    pub rejected: Vec<String>,
}

fn convert(raw: &Json, m: &FieldMapping) -> Result<Option<Value>, String> {
    let scale = m.scale.unwrap_or(1.0);
    let value = match (m.kind, raw) {
        (_, Json::Null) => return Ok(None),
        (ValueKind::Real, Json::Number(n)) => Value::Real(n.as_f64().unwrap_or(f64::NAN) * scale),
        (ValueKind::Real, Json::Bool(b)) => Value::Real(if *b { scale } else { 0.0 }),
        (ValueKind::Real, Json::String(s)) => match s.trim().parse::<f64>() {
            Ok(v) => Value::Real(v * scale),
            Err(_) => return Err(format!("`{}`: `{s}` is not a number", m.parameter)),
        },
        (ValueKind::Flag, Json::Bool(b)) => Value::Flag(*b),
        (ValueKind::Flag, Json::Number(n)) => Value::Flag(n.as_f64().unwrap_or(0.0) != 0.0),
        (ValueKind::Flag, Json::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "on" | "yes" | "1" | "active" | "detected" => Value::Flag(true),
            "false" | "off" | "no" | "0" | "inactive" | "clear" => Value::Flag(false),
            _ => return Err(format!("`{}`: `{s}` is not a boolean", m.parameter)),
        },
        (ValueKind::Text, Json::String(s)) => Value::Text(s.clone()),
        (ValueKind::Text, Json::Number(n)) => Value::Text(n.to_string()),
        (ValueKind::Text, Json::Bool(b)) => Value::Text(b.to_string()),
        (_, other) => {
            return Err(format!(
                "`{}`: unsupported JSON {} value",
                m.parameter,
                if other.is_array() { "array" } else { "object" }
            ))
        }
    };
    if let Value::Real(v) = value {
        if !v.is_finite() {
            return Err(format!("`{}`: value is not finite", m.parameter));
        }
    }
    Ok(Some(value))
}

fn top_level_key(pointer: &str) -> Option<String> {
    let first = pointer.strip_prefix('/')?.split('/').next()?;
    Some(first.replace("~1", "/").replace("~0", "~"))
}

/// Applies a field map to one JSON object.
pub fn map_fields(
    doc: &Json,
    entity_id: &str,
    field_map: &[FieldMapping],
    timestamp: Option<&TimestampField>,
    tags: &BTreeMap<String, String>,
    now: Timestamp,
) -> Parsed {
    let at = timestamp.and_then(|t| t.read(doc)).unwrap_or(now);
    let mut parsed = Parsed::default();
    for m in field_map {
        let Some(raw) = doc.pointer(&m.pointer) else {
            continue;
        };
        match convert(raw, m) {
            Ok(Some(value)) => {
                let mut dp = DataPoint::new(entity_id, m.parameter.clone(), value, at).with_unit(m.unit.clone());
                dp.tags = tags.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                parsed.points.push(dp);
            }
            Ok(None) => {}
            Err(reason) => parsed.rejected.push(reason),
        }
    }
    if let Json::Object(obj) = doc {
        let mut used: Vec<String> = field_map.iter().filter_map(|m| top_level_key(&m.pointer)).collect();
        if let Some(t) = timestamp.and_then(|t| top_level_key(&t.pointer)) {
            used.push(t);
        }
        parsed.ignored = obj.keys().filter(|k| !used.contains(k)).count();
    }
    parsed
}

/// Subscription filter plus the mapping of matching messages to points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicBinding {
    /// MQTT topic filter; `+` and `#` wildcards are numbered captures.
    pub filter: String,
    /// Entity id template; `{1}` is replaced by the first wildcard capture.
    pub entity_id: String,
    pub field_map: Vec<FieldMapping>,
    #[serde(default)]
    pub timestamp: Option<TimestampField>,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

/// Positions of `{N}` placeholders in a template.
fn placeholders(template: &str) -> Result<Vec<(usize, usize, usize)>, String> {
    let mut out = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => {
                let end = template[i..]
                    .find('}')
                    .map(|e| i + e)
                    .ok_or_else(|| format!("unclosed `{{` in template `{template}`"))?;
                let n: usize = template[i + 1..end]
                    .parse()
                    .map_err(|_| format!("placeholder `{}` is not a capture number", &template[i..=end]))?;
                if n == 0 {
                    return Err("captures are numbered from 1".into());
                }
                out.push((i, end + 1, n));
                i = end + 1;
            }
            b'}' => return Err(format!("unmatched `}}` in template `{template}`")),
            _ => i += 1,
        }
    }
    Ok(out)
}

fn valid_filter(filter: &str) -> bool {
    if filter.is_empty() {
        return false;
    }
    let levels: Vec<&str> = filter.split('/').collect();
    levels.iter().enumerate().all(|(i, l)| match *l {
        "#" => i == levels.len() - 1,
        "+" => true,
        l => !l.contains('+') && !l.contains('#'),
    })
}

impl TopicBinding {
    pub fn new(filter: impl Into<String>, entity_id: impl Into<String>, field_map: Vec<FieldMapping>) -> Self {
        TopicBinding {
            filter: filter.into(),
            entity_id: entity_id.into(),
            field_map,
            timestamp: None,
            tags: BTreeMap::new(),
        }
    }

    pub fn wildcard_count(&self) -> usize {
        self.filter.split('/').filter(|l| *l == "+" || *l == "#").count()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::InvalidBinding(format!("`{}`: {m}", self.filter)));
        if !valid_filter(&self.filter) {
            return bad("invalid topic filter".into());
        }
        if self.field_map.is_empty() {
            return bad("field_map must not be empty".into());
        }
        if self.entity_id.is_empty() {
            return bad("entity_id template must not be empty".into());
        }
        let holes = match placeholders(&self.entity_id) {
            Ok(h) => h,
            Err(e) => return bad(e),
        };
        let wildcards = self.wildcard_count();
        if let Some((_, _, n)) = holes.iter().find(|(_, _, n)| *n > wildcards) {
            return bad(format!("template capture {{{n}}} but the filter has {wildcards} wildcards"));
        }
        for m in &self.field_map {
            if !m.pointer.starts_with('/') {
                return bad(format!("pointer `{}` must start with `/`", m.pointer));
            }
            if m.scale.is_some_and(|s| !s.is_finite()) {
                return bad(format!("scale of `{}` is not finite", m.parameter));
            }
        }
        Ok(())
    }

    /// Wildcard captures of `topic`, or `None` when it does not match.
    pub fn captures<'t>(&self, topic: &'t str) -> Option<Vec<&'t str>> {
        if topic.starts_with('$') && (self.filter.starts_with('+') || self.filter.starts_with('#')) {
            return None;
        }
        let mut caps = Vec::new();
        let mut rest = Some(topic);
        for level in self.filter.split('/') {
            if level == "#" {
                caps.push(rest.unwrap_or(""));
                return Some(caps);
            }
            let r = rest?;
            let (head, tail) = match r.find('/') {
                Some(i) => (&r[..i], Some(&r[i + 1..])),
                None => (r, None),
            };
            if level == "+" {
                caps.push(head);
            } else if level != head {
                return None;
            }
            rest = tail;
        }
        rest.is_none().then_some(caps)
    }

    pub fn matches(&self, topic: &str) -> bool {
        self.captures(topic).is_some()
    }

    pub fn entity_for(&self, topic: &str) -> Result<String, IngestError> {
        let caps = self.captures(topic).ok_or_else(|| IngestError::TemplateMismatch {
            topic: topic.to_string(),
            filter: self.filter.clone(),
        })?;
        let holes = placeholders(&self.entity_id).map_err(IngestError::InvalidBinding)?;
        let mut out = String::with_capacity(self.entity_id.len());
        let mut last = 0;
        for (start, end, n) in holes {
            out.push_str(&self.entity_id[last..start]);
            let cap = caps.get(n - 1).ok_or_else(|| IngestError::TemplateMismatch {
                topic: topic.to_string(),
                filter: self.filter.clone(),
            })?;
            out.push_str(cap);
            last = end;
        }
        out.push_str(&self.entity_id[last..]);
        Ok(out)
    }
}

/// Maps one MQTT message onto data points. Pure: the same inputs always
/// give the same output.
pub fn parse_payload(
    topic: &str,
    payload: &[u8],
    binding: &TopicBinding,
    now: Timestamp,
) -> Result<Parsed, IngestError> {
    let entity = binding.entity_for(topic)?;
    let text = std::str::from_utf8(payload).map_err(|e| IngestError::MalformedJson(e.to_string()))?;
    let doc: Json = serde_json::from_str(text).map_err(|e| IngestError::MalformedJson(e.to_string()))?;
    Ok(map_fields(
        &doc,
        &entity,
        &binding.field_map,
        binding.timestamp.as_ref(),
        &binding.tags,
        now,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aranet() -> TopicBinding {
        TopicBinding::new(
            "aranet/+/sensors/+/json/measurements",
            "aranet-{2}",
            vec![
                FieldMapping::new("/co2", "CO2", "ppm"),
                FieldMapping::new("/temperature", "Temperature", "Cel"),
                FieldMapping::new("/humidity", "Humidity", "%"),
                FieldMapping::new("/pressure", "Atmospheric pressure", "hPa"),
                FieldMapping::new("/battery", "Battery", "%"),
                FieldMapping::new("/rssi", "RSSI", "dB"),
            ],
        )
    }

    #[test]
    fn six_parameter_payload() {
        let b = aranet();
        b.validate().unwrap();
        let payload = br#"{"co2":618,"temperature":21.4,"humidity":45,"pressure":1013.2,"battery":87,"rssi":-61}"#;
        let p = parse_payload("aranet/base1/sensors/0A1B/json/measurements", payload, &b, Timestamp(5)).unwrap();
        assert_eq!(p.points.len(), 6);
        assert_eq!(p.points[0].entity_id, "aranet-0A1B");
        assert_eq!(p.points[0].value, Value::Real(618.0));
        assert_eq!(p.points[5].value, Value::Real(-61.0));
        assert!(p.points.iter().all(|d| d.timestamp == Timestamp(5)));
        assert_eq!((p.ignored, p.rejected.len()), (0, 0));
    }

    #[test]
    fn malformed_and_mismatched() {
        let b = aranet();
        assert!(matches!(
            parse_payload("aranet/b/sensors/x/json/measurements", b"not json", &b, Timestamp(0)),
            Err(IngestError::MalformedJson(_))
        ));
        assert!(matches!(
            parse_payload("other/topic", b"{}", &b, Timestamp(0)),
            Err(IngestError::TemplateMismatch { .. })
        ));
    }

    #[test]
    fn wildcard_captures() {
        let b = TopicBinding::new("zigbee/#", "{1}", vec![FieldMapping::new("/v", "v", "")]);
        assert_eq!(b.captures("zigbee/floor1/motion"), Some(vec!["floor1/motion"]));
        assert_eq!(b.captures("zigbee"), Some(vec![""]));
        assert!(b.captures("$SYS/zigbee").is_none());
        let b = TopicBinding::new("a/+/c", "x-{1}", vec![FieldMapping::new("/v", "v", "")]);
        assert!(b.matches("a/b/c"));
        assert!(!b.matches("a/b/c/d"));
        assert!(!b.matches("a/b"));
        assert!(b.matches("a//c"));
    }

    #[test]
    fn binding_validation() {
        let mut b = aranet();
        b.entity_id = "x-{3}".into();
        assert!(b.validate().is_err());
        b.entity_id = "x-{1".into();
        assert!(b.validate().is_err());
        let b = TopicBinding::new("a/#/b", "x", vec![FieldMapping::new("/v", "v", "")]);
        assert!(b.validate().is_err());
        let b = TopicBinding::new("a/+", "x", vec![]);
        assert!(b.validate().is_err());
    }

    #[test]
    fn kinds_scale_and_timestamps() {
        let mut b = TopicBinding::new(
            "dev/+",
            "{1}",
            vec![
                FieldMapping::new("/occ", "Occupancy", "").flag(),
                FieldMapping::new("/level", "VOC level", "").text(),
                FieldMapping::new("/mv", "Battery voltage", "V").scaled(0.001),
                FieldMapping::new("/bad", "Bad", ""),
            ],
        );
        b.timestamp = Some(TimestampField {
            pointer: "/ts".into(),
            unit: TimeUnit::Millis,
        });
        let p = parse_payload(
            "dev/m1",
            br#"{"occ":"ON","level":"good","mv":3000,"bad":"x","ts":1623139200000,"extra":1}"#,
            &b,
            Timestamp(0),
        )
        .unwrap();
        assert_eq!(p.points[0].value, Value::Flag(true));
        assert_eq!(p.points[1].value, Value::Text("good".into()));
        assert_eq!(p.points[2].value, Value::Real(3.0));
        assert_eq!(p.points[0].timestamp, Timestamp(1_623_139_200_000_000_000));
        assert_eq!(p.rejected.len(), 1);
        assert_eq!(p.ignored, 1);

        let t = TimestampField {
            pointer: "/t".into(),
            unit: TimeUnit::Rfc3339,
        };
        let doc: Json = serde_json::json!({"t": "2021-06-08T08:00:00Z"});
        assert_eq!(t.read(&doc), Some(Timestamp(1_623_139_200_000_000_000)));
    }
}
