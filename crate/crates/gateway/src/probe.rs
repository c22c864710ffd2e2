//! One-shot reads against a single device, printed as JSON.

use gateway_bacnet::{discovery_to_json, result_to_json, BacnetClient, BacnetEndpoint};
use gateway_modbus::frame::RegisterKind;
use gateway_modbus::{decode_registers, ConnectionPolicy, DataType, ModbusClient, RegisterCodec, WordOrder};
use serde_json::{json, Value as Json};

#[derive(Debug, Clone)]
pub struct ModbusProbe {
    pub host: String,
    pub policy: ConnectionPolicy,
    pub unit: u8,
    pub kind: RegisterKind,
    pub address: u16,
    /// Registers to read; defaults to the codec span.
    pub count: Option<u16>,
    pub codec: Option<RegisterCodec>,
}

pub fn parse_kind(s: &str) -> Result<RegisterKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "holding" | "h" | "3" => Ok(RegisterKind::Holding),
        "input" | "i" | "4" => Ok(RegisterKind::Input),
        other => Err(format!("unknown register kind `{other}`, expected holding or input")),
    }
}

pub fn parse_word_order(s: &str) -> Result<WordOrder, String> {
    match s.to_ascii_lowercase().as_str() {
        "big" => Ok(WordOrder::Big),
        "little" => Ok(WordOrder::Little),
        other => Err(format!("unknown word order `{other}`, expected big or little")),
    }
}

pub fn codec(datatype: DataType, order: WordOrder, scale: f64, offset: f64) -> RegisterCodec {
    RegisterCodec::scaled(datatype, scale).with_word_order(order).with_offset(offset)
}

pub async fn probe_modbus(p: &ModbusProbe) -> anyhow::Result<Json> {
    let count = p.count.or(p.codec.map(|c| c.span())).unwrap_or(1);
    if let Some(c) = &p.codec {
        anyhow::ensure!(count >= c.span(), "count {count} is shorter than the {:?} span", c.datatype);
    }
    anyhow::ensure!(
        u32::from(p.address) + u32::from(count) <= 0x1_0000,
        "address {} + count {count} runs past the register table",
        p.address
    );
    let mut client = ModbusClient::new(p.host.clone(), p.unit, p.policy.clone());
    let words = client.read_registers(p.kind, p.address, count).await;
    client.close().await;
    let words = words?;
    let mut doc = json!({
        "host": p.host,
        "port": p.policy.port,
        "unit": p.unit,
        "kind": p.kind,
        "address": p.address,
        "count": count,
        "registers": words,
    });
    if let Some(c) = &p.codec {
        let value = decode_registers(c, &words[..c.span() as usize])?;
        doc["value"] = serde_json::to_value(value.as_real())?;
        doc["codec"] = serde_json::to_value(c)?;
    }
    Ok(doc)
}

/// Discovers the device's objects, then reads `names` (every named object
/// when empty) by object name.
pub async fn probe_bacnet(endpoint: BacnetEndpoint, names: &[String]) -> anyhow::Result<Json> {
    endpoint.validate()?;
    let client = BacnetClient::connect(endpoint.clone()).await?;
    let discovery = client.refresh_names().await?;
    let wanted: Vec<String> = if names.is_empty() {
        discovery.objects.iter().filter_map(|o| o.name.clone()).collect()
    } else {
        names.to_vec()
    };
    let values = if wanted.is_empty() {
        Json::Null
    } else {
        result_to_json(endpoint.device_instance, &client.read_by_name(&wanted).await?)
    };
    Ok(json!({
        "discovery": discovery_to_json(&discovery),
        "values": values,
    }))
}
