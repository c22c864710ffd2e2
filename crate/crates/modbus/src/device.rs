use gateway_core::{DataPoint, DeviceSpec, ParameterSpec, Timestamp, Value, ValueKind};
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::codec::{decode_registers, RegisterCodec};
use crate::frame::{RegisterKind, MAX_READ_COUNT};
use crate::{ConnectionPolicy, ModbusClient, ModbusError};

/// Where one parameter lives in the device's register space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModbusBinding {
    pub parameter: String,
    #[serde(default = "default_kind")]
    pub function: RegisterKind,
    pub address: u16,
    pub codec: RegisterCodec,
}

fn default_kind() -> RegisterKind {
    RegisterKind::Holding
}

impl ModbusBinding {
    pub fn holding(parameter: impl Into<String>, address: u16, codec: RegisterCodec) -> Self {
        ModbusBinding {
            parameter: parameter.into(),
            function: RegisterKind::Holding,
            address,
            codec,
        }
    }

    pub fn end(&self) -> u32 {
        self.address as u32 + self.codec.span() as u32
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.end() > 0x1_0000 {
            return Err(format!(
                "binding `{}` at {:#06x} runs past the end of the register table",
                self.parameter, self.address
            ));
        }
        Ok(())
    }
}

/// A parameter list plus the bindings that locate each parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisterMap {
    pub parameters: Vec<ParameterSpec>,
    pub bindings: Vec<ModbusBinding>,
}

impl RegisterMap {
    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModbusDevice {
    pub spec: DeviceSpec,
    pub host: String,
    pub unit_id: u8,
    pub bindings: Vec<ModbusBinding>,
}

impl ModbusDevice {
    pub fn from_map(spec: DeviceSpec, host: impl Into<String>, unit_id: u8, map: RegisterMap) -> Self {
        let mut spec = spec;
        spec.parameters = map.parameters;
        ModbusDevice {
            spec,
            host: host.into(),
            unit_id,
            bindings: map.bindings,
        }
    }

    /// Every binding must point at a declared parameter and fit the table.
    pub fn validate(&self) -> Vec<String> {
        let mut errors: Vec<String> = self.spec.validate().iter().map(|e| e.to_string()).collect();
        for b in &self.bindings {
            if self.spec.parameter(&b.parameter).is_none() {
                errors.push(format!(
                    "device `{}`: binding references undeclared parameter `{}`",
                    self.spec.device_id, b.parameter
                ));
            }
            if let Err(e) = b.validate() {
                errors.push(format!("device `{}`: {e}", self.spec.device_id));
            }
        }
        errors
    }

    pub(crate) fn make_point(&self, binding: &ModbusBinding, value: Value, at: Timestamp) -> DataPoint {
        let param = self.spec.parameter(&binding.parameter);
        let value = match (param.map(|p| p.kind), value) {
            (Some(ValueKind::Flag), Value::Real(v)) => Value::Flag(v != 0.0),
            (_, v) => v,
        };
        DataPoint {
            entity_id: self.spec.device_id.clone(),
            parameter: binding.parameter.clone(),
            value,
            unit: param.map(|p| p.unit.clone()).unwrap_or_default(),
            timestamp: at,
            tags: self.spec.tags.clone(),
        }
    }
}

/// Contiguous run of bindings served by one read request.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadGroup {
    pub kind: RegisterKind,
    pub start: u16,
    pub count: u16,
    pub members: Vec<usize>,
}

/// Merges bindings whose registers touch into requests of at most 125
/// registers. Bindings separated by a gap are never merged.
pub fn plan_reads(bindings: &[ModbusBinding], address_base: u16) -> Vec<ReadGroup> {
    let mut order: Vec<usize> = (0..bindings.len()).collect();
    order.sort_by_key(|&i| (bindings[i].function, bindings[i].address));

    let mut groups: Vec<ReadGroup> = Vec::new();
    for i in order {
        let b = &bindings[i];
        let start = address_base.wrapping_add(b.address);
        let span = b.codec.span();
        if let Some(g) = groups.last_mut() {
            let end = g.start as u32 + g.count as u32;
            if g.kind == b.function
                && end == start as u32
                && g.count as u32 + span as u32 <= MAX_READ_COUNT as u32
            {
                g.count += span;
                g.members.push(i);
                continue;
            }
        }
        groups.push(ReadGroup {
            kind: b.function,
            start,
            count: span,
            members: vec![i],
        });
    }
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub struct BindingError {
    pub parameter: String,
    pub error: ModbusError,
}

/// Result of one poll: the points that were read plus an error entry for
/// every binding that could not be.
#[derive(Debug, Clone, Default)]
pub struct ReadReport {
    pub points: Vec<DataPoint>,
    pub errors: Vec<BindingError>,
    pub requests: u32,
}

impl ReadReport {
    pub fn is_complete(&self) -> bool {
        self.errors.is_empty()
    }

    /// First connection-level error, if the poll failed to reach the device.
    pub fn connection_error(&self) -> Option<&ModbusError> {
        self.errors
            .iter()
            .map(|e| &e.error)
            .find(|e| e.is_connection_error())
    }
}

/// Reads `bindings` (addresses offset by `address_base`), returning decoded
/// values in binding order.
pub(crate) async fn read_bindings(
    client: &mut ModbusClient,
    bindings: &[ModbusBinding],
    address_base: u16,
) -> (Vec<Option<Result<Value, ModbusError>>>, u32) {
    let mut results: Vec<Option<Result<Value, ModbusError>>> = vec![None; bindings.len()];
    let mut requests = 0u32;
    let mut unreachable: Option<ModbusError> = None;

    for group in plan_reads(bindings, address_base) {
        if let Some(err) = &unreachable {
            for &i in &group.members {
                results[i] = Some(Err(err.clone()));
            }
            continue;
        }
        requests += 1;
        match client.read_registers(group.kind, group.start, group.count).await {
            Ok(words) => {
                for &i in &group.members {
                    let b = &bindings[i];
                    let offset = (address_base.wrapping_add(b.address) - group.start) as usize;
                    let slice = &words[offset..offset + b.codec.span() as usize];
                    results[i] = Some(decode_registers(&b.codec, slice));
                }
            }
            Err(ModbusError::ExceptionResponse { .. }) if group.members.len() > 1 => {
                debug!(start = group.start, count = group.count, "span rejected, reading bindings one by one");
                for &i in &group.members {
                    let b = &bindings[i];
                    requests += 1;
                    let start = address_base.wrapping_add(b.address);
                    let r = client
                        .read_registers(b.function, start, b.codec.span())
                        .await
                        .and_then(|w| decode_registers(&b.codec, &w));
                    if let Err(e) = &r {
                        if e.is_connection_error() {
                            unreachable = Some(e.clone());
                        }
                    }
                    results[i] = Some(r);
                }
            }
            Err(err) => {
                if err.is_connection_error() {
                    unreachable = Some(err.clone());
                }
                for &i in &group.members {
                    results[i] = Some(Err(err.clone()));
                }
            }
        }
    }
    (results, requests)
}

/// Polls every binding of `device` once through `client`.
pub async fn poll_device(client: &mut ModbusClient, device: &ModbusDevice) -> ReadReport {
    let (results, requests) = read_bindings(client, &device.bindings, 0).await;
    let at = Timestamp::now();
    let mut report = ReadReport {
        requests,
        ..Default::default()
    };
    for (binding, result) in device.bindings.iter().zip(results) {
        match result.expect("every binding belongs to a group") {
            Ok(value) => report.points.push(device.make_point(binding, value, at)),
            Err(error) => report.errors.push(BindingError {
                parameter: binding.parameter.clone(),
                error,
            }),
        }
    }
    report
}

/// One-shot poll with a fresh client; the connection is closed afterwards
/// whatever the policy.
pub async fn read_parameters(device: &ModbusDevice, policy: &ConnectionPolicy) -> ReadReport {
    let mut client = ModbusClient::new(device.host.clone(), device.unit_id, policy.clone());
    let report = poll_device(&mut client, device).await;
    client.close().await;
    report
}
