//! Test doubles for the gateway suites.

pub mod broker;
pub mod http_stub;
pub mod lineproto;

pub use broker::{BrokerOptions, TestBroker};
pub use http_stub::{HttpStub, Recorded};
