use std::fmt;

use serde::{Deserialize, Serialize};

/// Largest object instance number (22 bits).
pub const MAX_INSTANCE: u32 = (1 << 22) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectType {
    AnalogInput,
    AnalogOutput,
    AnalogValue,
    BinaryInput,
    BinaryOutput,
    BinaryValue,
    Device,
}

impl ObjectType {
    pub const ALL: [ObjectType; 7] = [
        ObjectType::AnalogInput,
        ObjectType::AnalogOutput,
        ObjectType::AnalogValue,
        ObjectType::BinaryInput,
        ObjectType::BinaryOutput,
        ObjectType::BinaryValue,
        ObjectType::Device,
    ];

    pub fn code(self) -> u16 {
        match self {
            ObjectType::AnalogInput => 0,
            ObjectType::AnalogOutput => 1,
            ObjectType::AnalogValue => 2,
            ObjectType::BinaryInput => 3,
            ObjectType::BinaryOutput => 4,
            ObjectType::BinaryValue => 5,
            ObjectType::Device => 8,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectType::AnalogInput => "analog-input",
            ObjectType::AnalogOutput => "analog-output",
            ObjectType::AnalogValue => "analog-value",
            ObjectType::BinaryInput => "binary-input",
            ObjectType::BinaryOutput => "binary-output",
            ObjectType::BinaryValue => "binary-value",
            ObjectType::Device => "device",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(
            self,
            ObjectType::BinaryInput | ObjectType::BinaryOutput | ObjectType::BinaryValue
        )
    }

    pub fn is_analog(self) -> bool {
        matches!(
            self,
            ObjectType::AnalogInput | ObjectType::AnalogOutput | ObjectType::AnalogValue
        )
    }
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ObjectType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unsupported object type `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectRef {
    pub object_type: ObjectType,
    pub instance: u32,
}

impl ObjectRef {
    /// Returns `None` when `instance` does not fit in 22 bits.
    pub fn new(object_type: ObjectType, instance: u32) -> Option<Self> {
        (instance <= MAX_INSTANCE).then_some(ObjectRef {
            object_type,
            instance,
        })
    }

    pub fn device(instance: u32) -> Option<Self> {
        Self::new(ObjectType::Device, instance)
    }

    /// Packed 32-bit object identifier: 10-bit type, 22-bit instance.
    pub fn encode(self) -> u32 {
        (self.object_type.code() as u32) << 22 | (self.instance & MAX_INSTANCE)
    }

    pub fn decode(raw: u32) -> Option<Self> {
        let object_type = ObjectType::from_code((raw >> 22) as u16)?;
        Some(ObjectRef {
            object_type,
            instance: raw & MAX_INSTANCE,
        })
    }
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.object_type, self.instance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropertyId {
    ObjectList,
    ObjectName,
    PresentValue,
    Units,
}

impl PropertyId {
    pub fn code(self) -> u32 {
        match self {
            PropertyId::ObjectList => 76,
            PropertyId::ObjectName => 77,
            PropertyId::PresentValue => 85,
            PropertyId::Units => 117,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            76 => Some(PropertyId::ObjectList),
            77 => Some(PropertyId::ObjectName),
            85 => Some(PropertyId::PresentValue),
            117 => Some(PropertyId::Units),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PropertyId::ObjectList => "object-list",
            PropertyId::ObjectName => "object-name",
            PropertyId::PresentValue => "present-value",
            PropertyId::Units => "units",
        }
    }
}

impl fmt::Display for PropertyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One property of one object, optionally a single array element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PropertyRef {
    pub property: PropertyId,
    pub array_index: Option<u32>,
}

impl From<PropertyId> for PropertyRef {
    fn from(property: PropertyId) -> Self {
        PropertyRef {
            property,
            array_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyQuery {
    pub object: ObjectRef,
    pub properties: Vec<PropertyRef>,
}

impl PropertyQuery {
    pub fn new(object: ObjectRef, properties: impl IntoIterator<Item = PropertyId>) -> Self {
        PropertyQuery {
            object,
            properties: properties.into_iter().map(PropertyRef::from).collect(),
        }
    }

    pub fn present_value(object: ObjectRef) -> Self {
        Self::new(object, [PropertyId::PresentValue])
    }
}

/// Error class values.
pub mod error_class {
    pub const DEVICE: u32 = 0;
    pub const OBJECT: u32 = 1;
    pub const PROPERTY: u32 = 2;
}

/// Error code values.
pub mod error_code {
    pub const OTHER: u32 = 0;
    pub const UNKNOWN_OBJECT: u32 = 31;
    pub const UNKNOWN_PROPERTY: u32 = 32;
    pub const INVALID_ARRAY_INDEX: u32 = 42;
}

/// Abort reason values.
pub mod abort_reason {
    pub const OTHER: u8 = 0;
    pub const BUFFER_OVERFLOW: u8 = 1;
    pub const SEGMENTATION_NOT_SUPPORTED: u8 = 4;
}

pub fn error_code_name(code: u32) -> &'static str {
    match code {
        error_code::OTHER => "other",
        error_code::UNKNOWN_OBJECT => "unknown-object",
        error_code::UNKNOWN_PROPERTY => "unknown-property",
        error_code::INVALID_ARRAY_INDEX => "invalid-array-index",
        2 => "configuration-in-progress",
        5 => "communication-disabled",
        25 => "operational-problem",
        27 => "read-access-denied",
        _ => "unrecognized-error",
    }
}

pub fn abort_reason_name(reason: u8) -> &'static str {
    match reason {
        0 => "other",
        1 => "buffer-overflow",
        2 => "invalid-apdu-in-this-state",
        3 => "preempted-by-higher-priority-task",
        4 => "segmentation-not-supported",
        5 => "security-error",
        6 => "insufficient-security",
        7 => "window-size-out-of-range",
        8 => "application-exceeded-reply-time",
        9 => "out-of-resources",
        10 => "tsm-timeout",
        11 => "apdu-too-long",
        _ => "unrecognized-reason",
    }
}

pub fn reject_reason_name(reason: u8) -> &'static str {
    match reason {
        0 => "other",
        1 => "buffer-overflow",
        2 => "inconsistent-parameters",
        3 => "invalid-parameter-data-type",
        4 => "invalid-tag",
        5 => "missing-required-parameter",
        6 => "parameter-out-of-range",
        7 => "too-many-arguments",
        8 => "undefined-enumeration",
        9 => "unrecognized-service",
        _ => "unrecognized-reason",
    }
}

/// Engineering unit names for the enumerated `units` values seen in
/// building installations.
pub fn units_name(units: u32) -> Option<&'static str> {
    Some(match units {
        19 => "megawatt-hours",
        47 => "watts",
        48 => "kilowatts",
        62 => "degrees-celsius",
        80 => "cubic-meters",
        95 => "no-units",
        96 => "parts-per-million",
        98 => "percent",
        _ => return None,
    })
}
