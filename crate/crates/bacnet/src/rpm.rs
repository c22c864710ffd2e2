//! ReadPropertyMultiple request encoding and acknowledgement decoding.

use gateway_core::Value;

use crate::tags::{AppValue, Reader, Writer};
use crate::types::{error_code_name, ObjectRef, PropertyId, PropertyQuery};
use crate::BacnetError;

pub const BVLC_TYPE: u8 = 0x81;
pub const BVLC_ORIGINAL_UNICAST: u8 = 0x0A;
pub const BVLC_ORIGINAL_BROADCAST: u8 = 0x0B;
pub const BVLC_FORWARDED: u8 = 0x04;
pub const NPDU_VERSION: u8 = 0x01;
pub const NPDU_EXPECTING_REPLY: u8 = 0x04;

pub const PDU_CONFIRMED_REQUEST: u8 = 0x0;
pub const PDU_SIMPLE_ACK: u8 = 0x2;
pub const PDU_COMPLEX_ACK: u8 = 0x3;
pub const PDU_ERROR: u8 = 0x5;
pub const PDU_REJECT: u8 = 0x6;
pub const PDU_ABORT: u8 = 0x7;

pub const SERVICE_READ_PROPERTY_MULTIPLE: u8 = 14;

/// Largest unsegmented APDU on BACnet/IP.
pub const MAX_APDU: usize = 1476;
/// Max-segments / max-APDU octet: no segmentation, up to 1476 bytes.
const MAX_APDU_CODE: u8 = 0x05;

/// Wraps an NPDU+APDU into a BVLC original-unicast datagram.
pub fn wrap_bvlc(npdu_apdu: &[u8]) -> Vec<u8> {
    let len = (npdu_apdu.len() + 4) as u16;
    let mut out = Vec::with_capacity(len as usize);
    out.extend_from_slice(&[BVLC_TYPE, BVLC_ORIGINAL_UNICAST]);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(npdu_apdu);
    out
}

/// Strips the BVLC and NPDU headers and returns the APDU.
pub fn unwrap_apdu(datagram: &[u8]) -> Result<&[u8], BacnetError> {
    let mut r = Reader::new(datagram);
    if r.u8()? != BVLC_TYPE {
        return Err(BacnetError::MalformedTag("not a BACnet/IP datagram".into()));
    }
    let function = r.u8()?;
    let len = r.take(2)?;
    let len = u16::from_be_bytes([len[0], len[1]]) as usize;
    if len != datagram.len() {
        return Err(BacnetError::MalformedTag(format!(
            "BVLC length {len} does not match datagram length {}",
            datagram.len()
        )));
    }
    match function {
        BVLC_ORIGINAL_UNICAST | BVLC_ORIGINAL_BROADCAST => {}
        BVLC_FORWARDED => {
            r.take(6)?;
        }
        other => {
            return Err(BacnetError::MalformedTag(format!(
                "unsupported BVLC function 0x{other:02X}"
            )))
        }
    }
    if r.u8()? != NPDU_VERSION {
        return Err(BacnetError::MalformedTag("unsupported NPDU version".into()));
    }
    let control = r.u8()?;
    if control & 0x80 != 0 {
        return Err(BacnetError::MalformedTag("network layer message".into()));
    }
    let has_dest = control & 0x20 != 0;
    if has_dest {
        r.take(2)?;
        let dlen = r.u8()? as usize;
        r.take(dlen)?;
    }
    if control & 0x08 != 0 {
        r.take(2)?;
        let slen = r.u8()? as usize;
        r.take(slen)?;
    }
    if has_dest {
        r.u8()?;
    }
    let rest = r.remaining();
    let apdu = r.take(rest)?;
    if apdu.is_empty() {
        return Err(BacnetError::MalformedTag("missing APDU".into()));
    }
    Ok(apdu)
}

pub(crate) fn encode_queries(w: &mut Writer, queries: &[PropertyQuery]) {
    for q in queries {
        w.context_object_id(0, q.object.encode());
        w.opening(1);
        for p in &q.properties {
            w.context_unsigned(0, p.property.code());
            if let Some(i) = p.array_index {
                w.context_unsigned(1, i);
            }
        }
        w.closing(1);
    }
}

/// Encodes a ReadPropertyMultiple confirmed request.
pub fn encode_rpm(invoke_id: u8, queries: &[PropertyQuery]) -> Result<Vec<u8>, BacnetError> {
    if queries.is_empty() || queries.iter().any(|q| q.properties.is_empty()) {
        return Err(BacnetError::EmptyQuery);
    }
    let mut w = Writer::new();
    w.extend(&[NPDU_VERSION, NPDU_EXPECTING_REPLY]);
    w.extend(&[
        PDU_CONFIRMED_REQUEST << 4,
        MAX_APDU_CODE,
        invoke_id,
        SERVICE_READ_PROPERTY_MULTIPLE,
    ]);
    encode_queries(&mut w, queries);
    let datagram = wrap_bvlc(&w.buf);
    if datagram.len() > MAX_APDU {
        return Err(BacnetError::TooLarge {
            size: datagram.len(),
            limit: MAX_APDU,
        });
    }
    Ok(datagram)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryError {
    /// Property access error reported by the device.
    Device { class: u32, code: u32 },
    /// The value uses an application tag this client does not decode.
    Unsupported(u8),
    /// The property held a list where a single value was expected.
    NotScalar(usize),
}

impl EntryError {
    pub fn name(&self) -> String {
        match self {
            EntryError::Device { code, .. } => error_code_name(*code).to_string(),
            EntryError::Unsupported(tag) => format!("unsupported-tag-{tag}"),
            EntryError::NotScalar(n) => format!("list-of-{n}"),
        }
    }
}

impl std::fmt::Display for EntryError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadEntry {
    pub object: ObjectRef,
    pub property: PropertyId,
    pub array_index: Option<u32>,
    pub outcome: Result<Vec<AppValue>, EntryError>,
}

impl ReadEntry {
    /// Converts the raw property value into a gateway value.
    pub fn value(&self) -> Result<Value, EntryError> {
        let values = self.outcome.as_ref().map_err(Clone::clone)?;
        let [single] = values.as_slice() else {
            return Err(EntryError::NotScalar(values.len()));
        };
        Ok(match single {
            AppValue::Real(r) => Value::Real(*r as f64),
            AppValue::Boolean(b) => Value::Flag(*b),
            AppValue::Enumerated(e)
                if self.property == PropertyId::PresentValue && self.object.object_type.is_binary() =>
            {
                Value::Flag(*e != 0)
            }
            AppValue::Enumerated(e) => Value::Real(*e as f64),
            AppValue::Unsigned(u) => Value::Real(*u as f64),
            AppValue::CharacterString(s) => Value::Text(s.clone()),
            AppValue::ObjectId(raw) => match ObjectRef::decode(*raw) {
                Some(o) => Value::Text(o.to_string()),
                None => return Err(EntryError::Unsupported(crate::tags::app::OBJECT_ID)),
            },
            AppValue::Unsupported(tag) => return Err(EntryError::Unsupported(*tag)),
        })
    }

    /// Raw enumerated value of a `units` property.
    pub fn units(&self) -> Option<u32> {
        match (self.property, self.outcome.as_deref()) {
            (PropertyId::Units, Ok([AppValue::Enumerated(u)])) => Some(*u),
            _ => None,
        }
    }

    /// Object identifiers held by an `object-list` read. Object types outside
    /// the supported set are skipped.
    pub fn object_list(&self) -> Option<Vec<ObjectRef>> {
        let values = self.outcome.as_ref().ok()?;
        Some(
            values
                .iter()
                .filter_map(|v| match v {
                    AppValue::ObjectId(raw) => ObjectRef::decode(*raw),
                    _ => None,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReadResult {
    pub entries: Vec<ReadEntry>,
}

impl ReadResult {
    pub fn get(&self, object: ObjectRef, property: PropertyId) -> Option<&ReadEntry> {
        self.entries
            .iter()
            .find(|e| e.object == object && e.property == property)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.entries.iter().filter(|e| e.value().is_ok()).count()
    }
}

fn decode_results(r: &mut Reader<'_>) -> Result<ReadResult, BacnetError> {
    let mut entries = Vec::new();
    while !r.is_empty() {
        let raw = r.context_object_id(0)?;
        let object = ObjectRef::decode(raw).ok_or_else(|| {
            BacnetError::MalformedTag(format!("unsupported object type {}", raw >> 22))
        })?;
        r.expect_opening(1)?;
        while !r.is_closing(1) {
            let code = r.context_unsigned(2)?;
            let property = PropertyId::from_code(code).ok_or_else(|| {
                BacnetError::MalformedTag(format!("unexpected property {code}"))
            })?;
            let array_index = if r.is_context(3) {
                Some(r.context_unsigned(3)?)
            } else {
                None
            };
            let outcome = if r.is_opening(4) {
                r.expect_opening(4)?;
                let mut values = Vec::new();
                while !r.is_closing(4) {
                    values.push(r.app_value()?);
                }
                r.expect_closing(4)?;
                match values.iter().find_map(|v| match v {
                    AppValue::Unsupported(t) => Some(*t),
                    _ => None,
                }) {
                    Some(t) => Err(EntryError::Unsupported(t)),
                    None => Ok(values),
                }
            } else {
                r.expect_opening(5)?;
                let class = r.app_enumerated()?;
                let code = r.app_enumerated()?;
                r.expect_closing(5)?;
                Err(EntryError::Device { class, code })
            };
            entries.push(ReadEntry {
                object,
                property,
                array_index,
                outcome,
            });
        }
        r.expect_closing(1)?;
    }
    Ok(ReadResult { entries })
}

/// Decodes the device's answer to a ReadPropertyMultiple request. Total over
/// arbitrary input: malformed datagrams yield an error, never a panic.
pub fn decode_rpm_ack(datagram: &[u8], invoke_id: u8) -> Result<ReadResult, BacnetError> {
    let apdu = unwrap_apdu(datagram)?;
    let mut r = Reader::new(apdu);
    let pdu_type = r.u8()? >> 4;
    let got = r.u8()?;
    if pdu_type == PDU_CONFIRMED_REQUEST {
        return Err(BacnetError::MalformedTag("request where a response was expected".into()));
    }
    if got != invoke_id {
        return Err(BacnetError::InvokeMismatch {
            expected: invoke_id,
            got,
        });
    }
    match pdu_type {
        PDU_COMPLEX_ACK => {}
        PDU_REJECT => return Err(BacnetError::Reject(r.u8()?)),
        PDU_ABORT => return Err(BacnetError::Abort(r.u8()?)),
        PDU_ERROR => {
            r.u8()?;
            let class = r.app_enumerated()?;
            let code = r.app_enumerated()?;
            return Err(BacnetError::ErrorPdu { class, code });
        }
        other => {
            return Err(BacnetError::MalformedTag(format!("unexpected PDU type {other}")))
        }
    }
    let service = r.u8()?;
    if service != SERVICE_READ_PROPERTY_MULTIPLE {
        return Err(BacnetError::MalformedTag(format!("unexpected service {service}")));
    }
    decode_results(&mut r)
}

/// Invoke id of a response datagram, if its headers parse.
pub fn response_invoke_id(datagram: &[u8]) -> Option<u8> {
    let apdu = unwrap_apdu(datagram).ok()?;
    match apdu.first()? >> 4 {
        PDU_CONFIRMED_REQUEST => None,
        _ => apdu.get(1).copied(),
    }
}
