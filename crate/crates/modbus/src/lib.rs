//! Modbus/TCP client side of the gateway.
//!
//! [`frame`] holds the bit-exact request/response encoding, [`codec`] turns
//! register words into values, [`ModbusClient`] owns the TCP connection to
//! one device and applies a [`ConnectionPolicy`], and [`read_parameters`]
//! polls a whole device map with coalesced requests.

pub mod codec;
pub mod frame;
pub mod maps;

mod client;
mod device;
mod error;
mod historical;

pub use client::{ClientStats, ConnectionMode, ConnectionPolicy, ModbusClient, DEFAULT_PORT};
pub use codec::{decode_registers, DataType, RegisterCodec, WordOrder};
pub use device::{
    plan_reads, poll_device, read_parameters, BindingError, ModbusBinding, ModbusDevice,
    ReadGroup, ReadReport, RegisterMap,
};
pub use error::{ExceptionCode, ModbusError};
pub use frame::{decode_read_response, encode_read, MbapHeader, RegisterKind};
pub use historical::{read_historical_block, DateEncoding, HistoricalBlock, HistoricalConfig};
