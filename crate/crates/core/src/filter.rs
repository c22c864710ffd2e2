//! Change-only emission.
//!
//! A point leaves the filter when its series has no history, when its value
//! differs bit-exactly from the previous value of the series, or when the
//! heartbeat interval has elapsed since the series last emitted. Everything
//! else is suppressed, but still updates the series state.

use std::collections::HashMap;

use thiserror::Error;

use crate::{DataPoint, Timestamp, Value};

/// Default re-emission interval for unchanged series.
pub const DEFAULT_HEARTBEAT_SECS: u64 = 3600;

/// Identity of one time series.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SeriesKey {
    pub entity_id: String,
    pub parameter: String,
}

impl SeriesKey {
    pub fn of(dp: &DataPoint) -> Self {
        SeriesKey {
            entity_id: dp.entity_id.clone(),
            parameter: dp.parameter.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterError {
    #[error("timestamp {got} for {entity_id}/{parameter} precedes last seen {last}")]
    TimestampRegression {
        entity_id: String,
        parameter: String,
        last: Timestamp,
        got: Timestamp,
    },
}

#[derive(Debug, Clone)]
struct SeriesState {
    value: Value,
    seen: Timestamp,
    emitted: Timestamp,
}

#[derive(Debug, Clone)]
pub struct ChangeFilter {
    last: HashMap<SeriesKey, SeriesState>,
    heartbeat_nanos: i64,
    regressions: u64,
}

impl Default for ChangeFilter {
    fn default() -> Self {
        Self::new(DEFAULT_HEARTBEAT_SECS)
    }
}

impl ChangeFilter {
    /// `heartbeat_secs == 0` disables re-emission of unchanged values.
    pub fn new(heartbeat_secs: u64) -> Self {
        ChangeFilter {
            last: HashMap::new(),
            heartbeat_nanos: (heartbeat_secs as i64).saturating_mul(Timestamp::NANOS_PER_SEC),
            regressions: 0,
        }
    }

    pub fn heartbeat_secs(&self) -> u64 {
        (self.heartbeat_nanos / Timestamp::NANOS_PER_SEC) as u64
    }

    /// Number of series currently tracked.
    pub fn len(&self) -> usize {
        self.last.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last.is_empty()
    }

    /// Points dropped because their timestamp went backwards.
    pub fn regressions(&self) -> u64 {
        self.regressions
    }

    pub fn last_value(&self, entity_id: &str, parameter: &str) -> Option<&Value> {
        self.last
            .get(&SeriesKey {
                entity_id: entity_id.to_string(),
                parameter: parameter.to_string(),
            })
            .map(|s| &s.value)
    }

    /// Feeds one validated point through the filter.
    ///
    /// Returns the point when it should be stored, `None` when it repeats the
    /// previous value of its series.
    pub fn observe(&mut self, dp: DataPoint) -> Result<Option<DataPoint>, FilterError> {
        let key = SeriesKey::of(&dp);
        let Some(state) = self.last.get_mut(&key) else {
            self.last.insert(
                key,
                SeriesState {
                    value: dp.value.clone(),
                    seen: dp.timestamp,
                    emitted: dp.timestamp,
                },
            );
            return Ok(Some(dp));
        };

        if dp.timestamp < state.seen {
            self.regressions += 1;
            return Err(FilterError::TimestampRegression {
                entity_id: key.entity_id,
                parameter: key.parameter,
                last: state.seen,
                got: dp.timestamp,
            });
        }

        let changed = !state.value.same_as(&dp.value);
        let heartbeat_due = self.heartbeat_nanos > 0
            && dp.timestamp.nanos_since(state.emitted) >= self.heartbeat_nanos;

        state.seen = dp.timestamp;
        if changed {
            state.value = dp.value.clone();
        }
        if changed || heartbeat_due {
            state.emitted = dp.timestamp;
            Ok(Some(dp))
        } else {
            Ok(None)
        }
    }
}
