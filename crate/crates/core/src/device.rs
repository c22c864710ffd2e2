use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Modbus,
    Bacnet,
    Mqtt,
    Http,
}

impl Protocol {
    /// Polled protocols need a `poll_interval`; push protocols must not have one.
    pub fn is_polled(self) -> bool {
        matches!(self, Protocol::Modbus | Protocol::Bacnet | Protocol::Http)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Protocol::Modbus => "modbus",
            Protocol::Bacnet => "bacnet",
            Protocol::Mqtt => "mqtt",
            Protocol::Http => "http",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    #[default]
    Real,
    Flag,
    Text,
}

/// One monitored parameter of a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub kind: ValueKind,
}

impl ParameterSpec {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, kind: ValueKind) -> Self {
        ParameterSpec {
            name: name.into(),
            unit: unit.into(),
            kind,
        }
    }

    pub fn real(name: impl Into<String>, unit: impl Into<String>) -> Self {
        Self::new(name, unit, ValueKind::Real)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub device_id: String,
    pub protocol: Protocol,
    /// Device class used to group rows in rate reports, e.g. "Circutor CEM-C31".
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub tags: Vec<(String, String)>,
    /// Seconds between polls; `None` for push devices.
    #[serde(default)]
    pub poll_interval: Option<f64>,
    #[serde(default)]
    pub parameters: Vec<ParameterSpec>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("device id must not be empty")]
    EmptyId,
    #[error("device `{device}`: poll interval {interval} s is below 1 s")]
    PollIntervalTooShort { device: String, interval: f64 },
    #[error("device `{device}`: {protocol} devices are polled and need a poll interval")]
    MissingPollInterval { device: String, protocol: Protocol },
    #[error("device `{device}`: parameter `{name}` is declared twice")]
    DuplicateParameter { device: String, name: String },
    #[error("device `{device}`: parameter name must not be empty")]
    EmptyParameterName { device: String },
}

impl DeviceSpec {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn kind_label(&self) -> &str {
        self.kind.as_deref().unwrap_or(&self.device_id)
    }

    /// Returns every violated invariant, not just the first.
    pub fn validate(&self) -> Vec<DeviceError> {
        let mut errors = Vec::new();
        if self.device_id.is_empty() {
            errors.push(DeviceError::EmptyId);
        }
        match self.poll_interval {
            Some(interval) if !(interval >= 1.0) => errors.push(DeviceError::PollIntervalTooShort {
                device: self.device_id.clone(),
                interval,
            }),
            None if self.protocol.is_polled() => errors.push(DeviceError::MissingPollInterval {
                device: self.device_id.clone(),
                protocol: self.protocol,
            }),
            _ => {}
        }
        let mut names = HashSet::new();
        for p in &self.parameters {
            if p.name.is_empty() {
                errors.push(DeviceError::EmptyParameterName {
                    device: self.device_id.clone(),
                });
            } else if !names.insert(p.name.as_str()) {
                errors.push(DeviceError::DuplicateParameter {
                    device: self.device_id.clone(),
                    name: p.name.clone(),
                });
            }
        }
        errors
    }
}
