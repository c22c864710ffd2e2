//! Dedup stage and bounded drop-oldest buffer in front of the sink.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, VecDeque};
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use gateway_core::{validate_datapoint, ChangeFilter, DataPoint, Inlet, Timestamp};
use serde::Serialize;
use tokio::sync::Notify;

use crate::rates::{DeviceRate, RateStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitOutcome {
    Accepted,
    /// Unchanged value inside the heartbeat window.
    Suppressed,
    /// Accepted, but the buffer was full and its oldest point was dropped.
    Shed,
    Invalid,
    /// Timestamp older than the last stored one for the same series.
    Regressed,
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// 0 disables heartbeats: only changes are emitted.
    pub heartbeat_secs: u64,
    pub shards: usize,
    pub buffer_capacity: usize,
    /// Buffer length that wakes the flusher early.
    pub batch_max_points: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            heartbeat_secs: gateway_core::DEFAULT_HEARTBEAT_SECS,
            shards: 16,
            buffer_capacity: 100_000,
            batch_max_points: 5000,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    received: AtomicU64,
    emitted: AtomicU64,
    suppressed: AtomicU64,
    invalid: AtomicU64,
    regressions: AtomicU64,
    shed: AtomicU64,
    flushed: AtomicU64,
    failed_flushes: AtomicU64,
    dead_lettered: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PipelineStats {
    pub received: u64,
    pub emitted: u64,
    pub suppressed: u64,
    pub invalid: u64,
    pub regressions: u64,
    pub shed: u64,
    pub flushed: u64,
    pub failed_flushes: u64,
    pub dead_lettered: u64,
    pub buffered: u64,
}

#[derive(Debug, Default)]
struct DeviceCounters {
    kind: Option<String>,
    params: usize,
    seen_params: std::collections::HashSet<String>,
    received: u64,
    emitted: u64,
    first: Option<Timestamp>,
    last: Option<Timestamp>,
}

struct Shard {
    filter: ChangeFilter,
    devices: HashMap<String, DeviceCounters>,
}

/// Outcome of the most recent flush attempt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlushStatus {
    pub at: Timestamp,
    pub ok: bool,
    pub detail: String,
}

pub struct Pipeline {
    last_flush: Mutex<Option<FlushStatus>>,
    shards: Vec<Mutex<Shard>>,
    buffer: Mutex<VecDeque<DataPoint>>,
    capacity: usize,
    batch_max: usize,
    counters: Counters,
    ready: Notify,
    started: Timestamp,
}

impl Pipeline {
    pub fn new(opts: PipelineOptions) -> Self {
        let shards = opts.shards.max(1);
        Pipeline {
            last_flush: Mutex::new(None),
            shards: (0..shards)
                .map(|_| {
                    Mutex::new(Shard {
                        filter: ChangeFilter::new(opts.heartbeat_secs),
                        devices: HashMap::new(),
                    })
                })
                .collect(),
            buffer: Mutex::new(VecDeque::new()),
            capacity: opts.buffer_capacity.max(1),
            batch_max: opts.batch_max_points.max(1),
            counters: Counters::default(),
            ready: Notify::new(),
            started: Timestamp::now(),
        }
    }

    fn shard(&self, entity_id: &str) -> &Mutex<Shard> {
        let mut h = DefaultHasher::new();
        entity_id.hash(&mut h);
        &self.shards[(h.finish() % self.shards.len() as u64) as usize]
    }

    /// Declares a device so rate reports can group it by kind and parameter
    /// count before any of its points arrive. With `params == 0` the count
    /// is taken from the parameters seen so far.
    pub fn register_device(&self, entity_id: &str, kind: &str, params: usize) {
        let mut shard = self.shard(entity_id).lock().unwrap();
        let d = shard.devices.entry(entity_id.to_string()).or_default();
        d.kind = Some(kind.to_string());
        d.params = params;
    }

    pub fn submit(&self, dp: DataPoint) -> SubmitOutcome {
        let c = &self.counters;
        c.received.fetch_add(1, Ordering::Relaxed);
        if validate_datapoint(&dp).is_err() {
            c.invalid.fetch_add(1, Ordering::Relaxed);
            return SubmitOutcome::Invalid;
        }
        let emitted = {
            let mut guard = self.shard(&dp.entity_id).lock().unwrap();
            let shard = &mut *guard;
            let dev = shard.devices.entry(dp.entity_id.clone()).or_default();
            dev.received += 1;
            if !dev.seen_params.contains(&dp.parameter) {
                dev.seen_params.insert(dp.parameter.clone());
            }
            let ts = dp.timestamp;
            match shard.filter.observe(dp) {
                Ok(Some(out)) => {
                    dev.emitted += 1;
                    dev.first = Some(dev.first.map_or(ts, |f| f.min(ts)));
                    dev.last = Some(dev.last.map_or(ts, |l| l.max(ts)));
                    out
                }
                Ok(None) => {
                    c.suppressed.fetch_add(1, Ordering::Relaxed);
                    return SubmitOutcome::Suppressed;
                }
                Err(_) => {
                    c.regressions.fetch_add(1, Ordering::Relaxed);
                    return SubmitOutcome::Regressed;
                }
            }
        };
        c.emitted.fetch_add(1, Ordering::Relaxed);
        let (len, shed) = {
            let mut buf = self.buffer.lock().unwrap();
            buf.push_back(emitted);
            let mut shed = false;
            while buf.len() > self.capacity {
                buf.pop_front();
                shed = true;
                c.shed.fetch_add(1, Ordering::Relaxed);
            }
            (buf.len(), shed)
        };
        if len >= self.batch_max {
            self.ready.notify_one();
        }
        if shed {
            SubmitOutcome::Shed
        } else {
            SubmitOutcome::Accepted
        }
    }

    /// Removes up to `max` of the oldest buffered points.
    pub fn take_batch(&self, max: usize) -> Vec<DataPoint> {
        let mut buf = self.buffer.lock().unwrap();
        let n = max.min(buf.len());
        buf.drain(..n).collect()
    }

    /// Puts an undelivered batch back at the head of the buffer. Anything
    /// beyond capacity is shed from the oldest end.
    pub fn requeue(&self, batch: Vec<DataPoint>) {
        let mut buf = self.buffer.lock().unwrap();
        for dp in batch.into_iter().rev() {
            buf.push_front(dp);
        }
        while buf.len() > self.capacity {
            buf.pop_front();
            self.counters.shed.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn buffered(&self) -> usize {
        self.buffer.lock().unwrap().len()
    }

    pub fn batch_max(&self) -> usize {
        self.batch_max
    }

    pub(crate) async fn batch_ready(&self) {
        self.ready.notified().await
    }

    fn set_flush_status(&self, ok: bool, detail: String) {
        *self.last_flush.lock().unwrap() = Some(FlushStatus { at: Timestamp::now(), ok, detail });
    }

    pub(crate) fn record_flush(&self, delivered: usize) {
        self.counters.flushed.fetch_add(delivered as u64, Ordering::Relaxed);
        self.set_flush_status(true, format!("{delivered} points delivered"));
    }

    pub(crate) fn record_failure(&self, reason: &str) {
        self.counters.failed_flushes.fetch_add(1, Ordering::Relaxed);
        self.set_flush_status(false, reason.to_string());
    }

    pub(crate) fn record_rejected(&self, status: u16, n: usize) {
        self.record_dead_letter(n);
        self.set_flush_status(true, format!("{n} points rejected with status {status}"));
    }

    pub fn last_flush(&self) -> Option<FlushStatus> {
        self.last_flush.lock().unwrap().clone()
    }

    pub(crate) fn record_dead_letter(&self, n: usize) {
        self.counters.dead_lettered.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub fn stats(&self) -> PipelineStats {
        let c = &self.counters;
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        PipelineStats {
            received: get(&c.received),
            emitted: get(&c.emitted),
            suppressed: get(&c.suppressed),
            invalid: get(&c.invalid),
            regressions: get(&c.regressions),
            shed: get(&c.shed),
            flushed: get(&c.flushed),
            failed_flushes: get(&c.failed_flushes),
            dead_lettered: get(&c.dead_lettered),
            buffered: self.buffered() as u64,
        }
    }

    /// Per-device counters. The window runs from pipeline start to now in
    /// wall-clock time; callers replaying simulated time pass their own
    /// window to [`crate::report_rates`].
    pub fn rate_stats(&self) -> RateStats {
        let mut devices = Vec::new();
        for shard in &self.shards {
            let shard = shard.lock().unwrap();
            for (id, d) in &shard.devices {
                devices.push(DeviceRate {
                    entity_id: id.clone(),
                    kind: d.kind.clone().unwrap_or_else(|| "unknown".into()),
                    params: if d.kind.is_some() && d.params > 0 { d.params } else { d.seen_params.len() },
                    received: d.received,
                    emitted: d.emitted,
                    first: d.first,
                    last: d.last,
                });
            }
        }
        devices.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
        RateStats {
            devices,
            window_start: self.started,
            window_end: Timestamp::now(),
        }
    }
}

impl Inlet for Pipeline {
    fn submit(&self, dp: DataPoint) {
        Pipeline::submit(self, dp);
    }
}
