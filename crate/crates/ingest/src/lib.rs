//! Push and pull ingestion of JSON telemetry.
//!
//! Vendor payload shapes are described entirely by configuration: a
//! [`TopicBinding`] or [`HttpPollSpec`] maps JSON pointers to parameters.

mod binding;
mod error;
mod http;
mod mqtt;

pub use binding::{map_fields, parse_payload, FieldMapping, Parsed, TimeUnit, TimestampField, TopicBinding};
pub use error::IngestError;
pub use http::{poll_http, run_http_poller, HttpPollSpec, MIN_HTTP_INTERVAL_SECS};
pub use mqtt::{stopped, Backoff, BrokerConfig, IngestStats, Subscriber};
