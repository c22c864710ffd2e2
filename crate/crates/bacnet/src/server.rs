//! Device side of ReadPropertyMultiple, used by simulated controllers.

use crate::rpm::{
    unwrap_apdu, wrap_bvlc, PDU_ABORT, PDU_COMPLEX_ACK, PDU_CONFIRMED_REQUEST, PDU_ERROR,
    PDU_REJECT, SERVICE_READ_PROPERTY_MULTIPLE,
};
use crate::tags::{AppValue, Reader, Writer};

/// Reject reason codes.
pub mod reject_reason {
    pub const OTHER: u8 = 0;
    pub const INVALID_TAG: u8 = 4;
    pub const MISSING_REQUIRED_PARAMETER: u8 = 5;
    pub const UNRECOGNIZED_SERVICE: u8 = 9;
}

/// One requested object with raw property identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawQuery {
    pub object: u32,
    pub properties: Vec<(u32, Option<u32>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpmRequest {
    pub invoke_id: u8,
    pub max_apdu_code: u8,
    pub queries: Vec<RawQuery>,
}

/// Why a request could not be served. `invoke_id` is known when the APDU
/// header parsed far enough to answer with a reject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestError {
    pub invoke_id: Option<u8>,
    pub reason: u8,
}

pub fn decode_rpm_request(datagram: &[u8]) -> Result<RpmRequest, RequestError> {
    let unanswerable = RequestError {
        invoke_id: None,
        reason: reject_reason::OTHER,
    };
    let apdu = unwrap_apdu(datagram).map_err(|_| unanswerable.clone())?;
    let mut r = Reader::new(apdu);
    let first = r.u8().map_err(|_| unanswerable.clone())?;
    if first >> 4 != PDU_CONFIRMED_REQUEST || first & 0x08 != 0 {
        return Err(unanswerable);
    }
    let (Ok(max_apdu_code), Ok(invoke_id), Ok(service)) = (r.u8(), r.u8(), r.u8()) else {
        return Err(unanswerable);
    };
    let reject = |reason| RequestError {
        invoke_id: Some(invoke_id),
        reason,
    };
    if service != SERVICE_READ_PROPERTY_MULTIPLE {
        return Err(reject(reject_reason::UNRECOGNIZED_SERVICE));
    }
    let mut queries = Vec::new();
    let mut parse = || -> Result<(), crate::BacnetError> {
        while !r.is_empty() {
            let object = r.context_object_id(0)?;
            r.expect_opening(1)?;
            let mut properties = Vec::new();
            while !r.is_closing(1) {
                let prop = r.context_unsigned(0)?;
                let index = if r.is_context(1) {
                    Some(r.context_unsigned(1)?)
                } else {
                    None
                };
                properties.push((prop, index));
            }
            r.expect_closing(1)?;
            queries.push(RawQuery { object, properties });
        }
        Ok(())
    };
    parse().map_err(|_| reject(reject_reason::INVALID_TAG))?;
    if queries.is_empty() || queries.iter().any(|q| q.properties.is_empty()) {
        return Err(reject(reject_reason::MISSING_REQUIRED_PARAMETER));
    }
    Ok(RpmRequest {
        invoke_id,
        max_apdu_code,
        queries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AckProperty {
    pub property: u32,
    pub array_index: Option<u32>,
    /// Values, or a `(class, code)` property access error.
    pub outcome: Result<Vec<AppValue>, (u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AckObject {
    pub object: u32,
    pub properties: Vec<AckProperty>,
}

fn response_npdu() -> Writer {
    let mut w = Writer::new();
    w.extend(&[0x01, 0x00]);
    w
}

pub fn encode_rpm_ack(invoke_id: u8, objects: &[AckObject]) -> Vec<u8> {
    let mut w = response_npdu();
    w.extend(&[PDU_COMPLEX_ACK << 4, invoke_id, SERVICE_READ_PROPERTY_MULTIPLE]);
    for o in objects {
        w.context_object_id(0, o.object);
        w.opening(1);
        for p in &o.properties {
            w.context_unsigned(2, p.property);
            if let Some(i) = p.array_index {
                w.context_unsigned(3, i);
            }
            match &p.outcome {
                Ok(values) => {
                    w.opening(4);
                    for v in values {
                        w.app_value(v);
                    }
                    w.closing(4);
                }
                Err((class, code)) => {
                    w.opening(5);
                    w.app_enumerated(*class);
                    w.app_enumerated(*code);
                    w.closing(5);
                }
            }
        }
        w.closing(1);
    }
    wrap_bvlc(&w.buf)
}

pub fn encode_abort(invoke_id: u8, reason: u8) -> Vec<u8> {
    let mut w = response_npdu();
    // server-originated abort
    w.extend(&[PDU_ABORT << 4 | 0x01, invoke_id, reason]);
    wrap_bvlc(&w.buf)
}

pub fn encode_reject(invoke_id: u8, reason: u8) -> Vec<u8> {
    let mut w = response_npdu();
    w.extend(&[PDU_REJECT << 4, invoke_id, reason]);
    wrap_bvlc(&w.buf)
}

pub fn encode_error(invoke_id: u8, service: u8, class: u32, code: u32) -> Vec<u8> {
    let mut w = response_npdu();
    w.extend(&[PDU_ERROR << 4, invoke_id, service]);
    w.app_enumerated(class);
    w.app_enumerated(code);
    wrap_bvlc(&w.buf)
}
