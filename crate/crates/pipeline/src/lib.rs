//! From deduplicated points to a line-protocol sink.
//!
//! Producers call [`Pipeline::submit`]; a single [`run_flusher`] task per sink
//! drains the buffer in batches through [`Sink`].

mod config;
pub mod line;
mod pipeline;
mod rates;
mod schedule;
mod sink;

pub use config::{RetryPolicy, SinkConfig, SinkConfigError, SinkMode};
pub use line::{point_to_line, record_from_point, to_line, LineError, LineRecord};
pub use pipeline::{FlushStatus, Pipeline, PipelineOptions, PipelineStats, SubmitOutcome};
pub use rates::{format_rates, report_rates, total_row, DeviceRate, RateError, RateRow, RateStats, TOTAL_KIND};
pub use schedule::{PollSchedule, ScheduleError};
pub use sink::{flush_once, run_flusher, FlushOutcome, Sink, SinkError};
