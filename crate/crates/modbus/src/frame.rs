//! Modbus/TCP application data units.
//!
//! Every frame is a 7-byte MBAP header followed by a PDU. All multi-byte
//! fields are big-endian.

use crate::{ExceptionCode, ModbusError};

pub const MBAP_LEN: usize = 7;
/// Largest register count a single read request may ask for.
pub const MAX_READ_COUNT: u16 = 125;
/// Largest register count a single Write Multiple Registers request may carry.
pub const MAX_WRITE_COUNT: u16 = 123;

pub const FC_READ_HOLDING: u8 = 0x03;
pub const FC_READ_INPUT: u8 = 0x04;
pub const FC_WRITE_MULTIPLE: u8 = 0x10;

/// Register table addressed by a read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegisterKind {
    Holding,
    Input,
}

impl RegisterKind {
    pub fn function_code(self) -> u8 {
        match self {
            RegisterKind::Holding => FC_READ_HOLDING,
            RegisterKind::Input => FC_READ_INPUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MbapHeader {
    pub transaction_id: u16,
    pub protocol_id: u16,
    /// Bytes following the length field: unit id plus PDU.
    pub length: u16,
    pub unit_id: u8,
}

impl MbapHeader {
    pub fn new(transaction_id: u16, pdu_len: usize, unit_id: u8) -> Self {
        MbapHeader {
            transaction_id,
            protocol_id: 0,
            length: (pdu_len + 1) as u16,
            unit_id,
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.transaction_id.to_be_bytes());
        out.extend_from_slice(&self.protocol_id.to_be_bytes());
        out.extend_from_slice(&self.length.to_be_bytes());
        out.push(self.unit_id);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ModbusError> {
        if bytes.len() < MBAP_LEN {
            return Err(ModbusError::Truncated { len: bytes.len() });
        }
        let header = MbapHeader {
            transaction_id: u16::from_be_bytes([bytes[0], bytes[1]]),
            protocol_id: u16::from_be_bytes([bytes[2], bytes[3]]),
            length: u16::from_be_bytes([bytes[4], bytes[5]]),
            unit_id: bytes[6],
        };
        if header.protocol_id != 0 {
            return Err(ModbusError::ProtocolId(header.protocol_id));
        }
        if header.length == 0 {
            return Err(ModbusError::LengthMismatch {
                expected: 1,
                got: 0,
            });
        }
        Ok(header)
    }

    /// Total frame size implied by the length field.
    pub fn frame_len(&self) -> usize {
        6 + self.length as usize
    }
}

fn frame(tx: u16, unit: u8, pdu: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(MBAP_LEN + pdu.len());
    MbapHeader::new(tx, pdu.len(), unit).encode(&mut out);
    out.extend_from_slice(pdu);
    out
}

/// Builds a Read Holding/Input Registers request (12 bytes).
pub fn encode_read(
    tx: u16,
    unit: u8,
    kind: RegisterKind,
    addr: u16,
    count: u16,
) -> Result<Vec<u8>, ModbusError> {
    if count == 0 || count > MAX_READ_COUNT {
        return Err(ModbusError::CountOutOfRange { count });
    }
    if addr as u32 + count as u32 > 0x1_0000 {
        return Err(ModbusError::AddressOverflow { addr, count });
    }
    let mut pdu = [0u8; 5];
    pdu[0] = kind.function_code();
    pdu[1..3].copy_from_slice(&addr.to_be_bytes());
    pdu[3..5].copy_from_slice(&count.to_be_bytes());
    Ok(frame(tx, unit, &pdu))
}

/// Builds a Write Multiple Registers (0x10) request.
pub fn encode_write_multiple(
    tx: u16,
    unit: u8,
    addr: u16,
    values: &[u16],
) -> Result<Vec<u8>, ModbusError> {
    let count = values.len() as u16;
    if values.is_empty() || values.len() > MAX_WRITE_COUNT as usize {
        return Err(ModbusError::CountOutOfRange { count });
    }
    if addr as u32 + count as u32 > 0x1_0000 {
        return Err(ModbusError::AddressOverflow { addr, count });
    }
    let mut pdu = Vec::with_capacity(6 + values.len() * 2);
    pdu.push(FC_WRITE_MULTIPLE);
    pdu.extend_from_slice(&addr.to_be_bytes());
    pdu.extend_from_slice(&count.to_be_bytes());
    pdu.push((values.len() * 2) as u8);
    for v in values {
        pdu.extend_from_slice(&v.to_be_bytes());
    }
    Ok(frame(tx, unit, &pdu))
}

/// Validates the header and function echo shared by every response, returning
/// the PDU body after the function code.
fn response_body(frame: &[u8], expected_tx: u16, function: u8) -> Result<&[u8], ModbusError> {
    if frame.len() < MBAP_LEN + 2 {
        return Err(ModbusError::Truncated { len: frame.len() });
    }
    let header = MbapHeader::decode(frame)?;
    if header.transaction_id != expected_tx {
        return Err(ModbusError::TransactionMismatch {
            expected: expected_tx,
            got: header.transaction_id,
        });
    }
    if header.frame_len() != frame.len() {
        return Err(ModbusError::LengthMismatch {
            expected: header.frame_len(),
            got: frame.len(),
        });
    }
    let fc = frame[MBAP_LEN];
    if fc & 0x80 != 0 && fc & 0x7F == function {
        return Err(ModbusError::ExceptionResponse {
            function,
            code: ExceptionCode(frame[MBAP_LEN + 1]),
        });
    }
    if fc != function {
        return Err(ModbusError::FunctionMismatch {
            expected: function,
            got: fc,
        });
    }
    Ok(&frame[MBAP_LEN + 1..])
}

/// Decodes a read response into its register words.
pub fn decode_read_response(
    frame: &[u8],
    expected_tx: u16,
    kind: RegisterKind,
    expected_count: u16,
) -> Result<Vec<u16>, ModbusError> {
    let body = response_body(frame, expected_tx, kind.function_code())?;
    let byte_count = body[0] as usize;
    let want = expected_count as usize * 2;
    if byte_count != want {
        return Err(ModbusError::LengthMismatch {
            expected: want,
            got: byte_count,
        });
    }
    let data = &body[1..];
    if data.len() != byte_count {
        return Err(ModbusError::LengthMismatch {
            expected: byte_count,
            got: data.len(),
        });
    }
    Ok(data
        .chunks_exact(2)
        .map(|w| u16::from_be_bytes([w[0], w[1]]))
        .collect())
}

/// Checks that a Write Multiple Registers response echoes the request.
pub fn decode_write_response(
    frame: &[u8],
    expected_tx: u16,
    addr: u16,
    count: u16,
) -> Result<(), ModbusError> {
    let body = response_body(frame, expected_tx, FC_WRITE_MULTIPLE)?;
    if body.len() != 4 {
        return Err(ModbusError::LengthMismatch {
            expected: 4,
            got: body.len(),
        });
    }
    let echo_addr = u16::from_be_bytes([body[0], body[1]]);
    let echo_count = u16::from_be_bytes([body[2], body[3]]);
    if echo_addr != addr || echo_count != count {
        return Err(ModbusError::WriteEchoMismatch {
            addr: echo_addr,
            count: echo_count,
        });
    }
    Ok(())
}
