//! BACnet/IP ReadPropertyMultiple client.
//!
//! Only unsegmented confirmed requests over unicast UDP are supported.
//! Requests too large for one datagram are split at the query level.

pub mod rpm;
pub mod server;
pub mod tags;
pub mod types;

mod client;
mod error;
mod json;

pub use client::{BacnetClient, BacnetEndpoint, DiscoveredObject, Discovery, DEFAULT_PORT};
pub use error::BacnetError;
pub use json::{discovery_to_json, read_properties_json, result_to_json};
pub use rpm::{decode_rpm_ack, encode_rpm, EntryError, ReadEntry, ReadResult, MAX_APDU};
pub use tags::AppValue;
pub use types::{ObjectRef, ObjectType, PropertyId, PropertyQuery, PropertyRef};
