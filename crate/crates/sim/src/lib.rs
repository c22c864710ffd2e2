//! Device simulators for exercising the gateway without hardware.

pub mod bacnet;
pub mod fleet;
pub mod modbus;

mod clock;
mod error;
mod value;

pub use bacnet::{run_bacnet_sim, BacnetSimConfig, BacnetSimHandle, BacnetSimStats, SimObject};
pub use clock::SimClock;
pub use error::SimError;
pub use fleet::{run_mqtt_fleet, FleetBroker, FleetClass, FleetHandle, FleetParameter, FleetStats, SimFleet};
pub use modbus::{encode_value, FaultModel, ModbusSim, ModbusSimHandle, ModbusSimStats, Registers};
pub use value::{ValueModel, ValueSource};
