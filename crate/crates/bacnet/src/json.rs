//! JSON rendering of read results.

use chrono::{SecondsFormat, Utc};
use gateway_core::Value;
use serde_json::{json, Map, Value as Json};

use crate::client::{BacnetClient, BacnetEndpoint, Discovery};
use crate::rpm::{ReadEntry, ReadResult};
use crate::types::{units_name, PropertyId, PropertyQuery};
use crate::BacnetError;

fn entry_json(e: &ReadEntry) -> Json {
    let mut m = Map::new();
    m.insert("object_type".into(), e.object.object_type.name().into());
    m.insert("instance".into(), e.object.instance.into());
    m.insert("property".into(), e.property.name().into());
    if let Some(i) = e.array_index {
        m.insert("array_index".into(), i.into());
    }
    let value = if e.property == PropertyId::ObjectList {
        e.object_list().map(|objs| {
            Json::Array(
                objs.iter()
                    .map(|o| json!({"object_type": o.object_type.name(), "instance": o.instance}))
                    .collect(),
            )
        })
    } else {
        None
    };
    let value = match value {
        Some(v) if e.array_index != Some(0) => Ok(v),
        _ => e.value().map(|v| match v {
            Value::Real(r) => serde_json::Number::from_f64(r).map(Json::Number).unwrap_or(Json::Null),
            Value::Flag(b) => Json::Bool(b),
            Value::Text(s) => Json::String(s),
        }),
    };
    match value {
        Ok(v) => {
            m.insert("value".into(), v);
            if let Some(name) = e.units().and_then(units_name) {
                m.insert("units_name".into(), name.into());
            }
        }
        Err(err) => {
            m.insert("error".into(), err.name().into());
        }
    }
    Json::Object(m)
}

/// Renders a read result as `{device, timestamp, results}`. Object keys are
/// emitted in sorted order.
pub fn result_to_json(device_instance: u32, result: &ReadResult) -> Json {
    json!({
        "device": device_instance,
        "timestamp": Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        "results": result.entries.iter().map(entry_json).collect::<Vec<_>>(),
    })
}

pub fn discovery_to_json(discovery: &Discovery) -> Json {
    let objects: Vec<Json> = discovery
        .objects
        .iter()
        .map(|o| {
            let mut m = Map::new();
            m.insert("object_type".into(), o.object.object_type.name().into());
            m.insert("instance".into(), o.object.instance.into());
            m.insert("name".into(), o.name.clone().map(Json::String).unwrap_or(Json::Null));
            if let Some(u) = o.units {
                m.insert("units".into(), u.into());
                if let Some(name) = units_name(u) {
                    m.insert("units_name".into(), name.into());
                }
            }
            if let Some(e) = &o.error {
                m.insert("error".into(), e.clone().into());
            }
            Json::Object(m)
        })
        .collect();
    json!({
        "device": discovery.device.instance,
        "partial": discovery.partial,
        "objects": objects,
    })
}

/// Connects, reads the queries and returns the JSON document.
pub async fn read_properties_json(
    endpoint: &BacnetEndpoint,
    queries: &[PropertyQuery],
) -> Result<Json, BacnetError> {
    let client = BacnetClient::connect(endpoint.clone()).await?;
    let result = client.read_property_multiple(queries).await?;
    Ok(result_to_json(endpoint.device_instance, &result))
}
