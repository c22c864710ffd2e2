//! Gateway daemon and the operational commands around it.

pub mod config;
pub mod daemon;
pub mod env;
pub mod health;
pub mod pollers;
pub mod probe;
pub mod simulate;
pub mod stats;

pub use config::{load_config, parse_config, ConfigError, GatewayConfig, Loaded};
pub use daemon::{run_until, start, DrainReport, RunningGateway};
pub use health::{HealthSnapshot, HealthState};
pub use stats::{cmd_stats, StatsError, StatsReport};
