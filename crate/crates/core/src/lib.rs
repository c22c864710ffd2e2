//! Domain types shared by every part of the gateway.
//!
//! A [`DataPoint`] is the unit that flows from protocol clients through the
//! [`ChangeFilter`] into the sink. Everything else in this crate exists to
//! describe where points come from ([`DeviceSpec`], [`ParameterSpec`]) or to
//! keep them well formed ([`validate_datapoint`]).

mod device;
mod filter;
mod point;
mod time;
mod value;

pub use device::{DeviceError, DeviceSpec, ParameterSpec, Protocol, ValueKind};
pub use filter::{ChangeFilter, FilterError, SeriesKey, DEFAULT_HEARTBEAT_SECS};
pub use point::{validate_datapoint, DataPoint, ValidationError};
pub use time::Timestamp;
pub use value::{Value, MAX_TEXT_LEN};

/// Destination for points produced by pollers and subscribers.
///
/// Implementations must be cheap to call and must never block the caller for
/// long; the pipeline sheds load instead of applying backpressure.
pub trait Inlet: Send + Sync {
    fn submit(&self, dp: DataPoint);
}

impl<F> Inlet for F
where
    F: Fn(DataPoint) + Send + Sync,
{
    fn submit(&self, dp: DataPoint) {
        self(dp)
    }
}
