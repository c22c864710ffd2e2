use std::fmt;

use thiserror::Error;

/// Exception code carried by a Modbus exception response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExceptionCode(pub u8);

impl ExceptionCode {
    pub const ILLEGAL_FUNCTION: ExceptionCode = ExceptionCode(0x01);
    pub const ILLEGAL_DATA_ADDRESS: ExceptionCode = ExceptionCode(0x02);
    pub const ILLEGAL_DATA_VALUE: ExceptionCode = ExceptionCode(0x03);
    pub const SERVER_DEVICE_FAILURE: ExceptionCode = ExceptionCode(0x04);
    pub const SERVER_DEVICE_BUSY: ExceptionCode = ExceptionCode(0x06);

    pub fn name(self) -> &'static str {
        match self.0 {
            0x01 => "illegal function",
            0x02 => "illegal data address",
            0x03 => "illegal data value",
            0x04 => "server device failure",
            0x05 => "acknowledge",
            0x06 => "server device busy",
            0x08 => "memory parity error",
            0x0A => "gateway path unavailable",
            0x0B => "gateway target failed to respond",
            _ => "unknown exception",
        }
    }
}

impl fmt::Display for ExceptionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:02X} ({})", self.0, self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModbusError {
    #[error("register count {count} outside 1..=125")]
    CountOutOfRange { count: u16 },
    #[error("address {addr:#06x} + {count} registers runs past the end of the table")]
    AddressOverflow { addr: u16, count: u16 },
    #[error("exception response to function {function:#04x}: {code}")]
    ExceptionResponse { function: u8, code: ExceptionCode },
    #[error("transaction id mismatch: expected {expected}, got {got}")]
    TransactionMismatch { expected: u16, got: u16 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("function code mismatch: expected {expected:#04x}, got {got:#04x}")]
    FunctionMismatch { expected: u8, got: u8 },
    #[error("write response echoed address {addr:#06x} count {count}")]
    WriteEchoMismatch { addr: u16, count: u16 },
    #[error("protocol id {0} is not Modbus")]
    ProtocolId(u16),
    #[error("frame truncated at {len} bytes")]
    Truncated { len: usize },
    #[error("codec spans {expected} registers, got {got}")]
    SpanMismatch { expected: u16, got: usize },
    #[error("decoded value is not finite")]
    NonFiniteValue,
    #[error("connect to {target} timed out")]
    ConnectTimeout { target: String },
    #[error("connect to {target} failed: {reason}")]
    ConnectFailed { target: String, reason: String },
    #[error("no response within the I/O timeout")]
    IoTimeout,
    #[error("connection lost: {0}")]
    Disconnected(String),
    #[error("data not ready after {polls} status polls")]
    ReadyTimeout { polls: u32 },
    #[error("device rejected the date write: {code}")]
    WriteRejected { code: ExceptionCode },
    #[error("invalid date {0}")]
    InvalidDate(String),
}

impl ModbusError {
    /// Errors after which the connection is unusable and a retry on a fresh
    /// connection may succeed.
    pub fn is_connection_error(&self) -> bool {
        matches!(
            self,
            ModbusError::ConnectTimeout { .. }
                | ModbusError::ConnectFailed { .. }
                | ModbusError::IoTimeout
                | ModbusError::Disconnected(_)
        )
    }
}
