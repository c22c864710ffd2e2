use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use gateway_core::{DataPoint, Inlet, Timestamp, Value};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::mpsc;

use crate::rule::{AlertRule, TypeMismatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Fired,
    Recovered,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Fired => "fired",
            EventKind::Recovered => "recovered",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlertEvent {
    pub rule: String,
    pub entity: String,
    pub parameter: String,
    pub kind: EventKind,
    pub value: Value,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("rule `{rule}` disabled for `{entity}`: {source}")]
pub struct AlertError {
    pub rule: String,
    pub entity: String,
    pub source: TypeMismatch,
}

/// Evaluation state of one rule for one entity.
#[derive(Debug, Clone, Default)]
pub struct RuleState {
    active: bool,
    run_start: Option<Timestamp>,
    last_fired: Option<Timestamp>,
    disabled: bool,
}

fn secs_between(later: Timestamp, earlier: Timestamp) -> f64 {
    later.nanos_since(earlier) as f64 / 1e9
}

impl RuleState {
    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn is_disabled(&self) -> bool {
        self.disabled
    }

    /// Feeds one point that already matches the rule's selector and parameter.
    /// A kind mismatch disables the rule for this entity and is reported once.
    pub fn evaluate(&mut self, rule: &AlertRule, dp: &DataPoint) -> Result<Option<AlertEvent>, AlertError> {
        if self.disabled {
            return Ok(None);
        }
        let disable = |s: &mut Self, e: TypeMismatch| {
            s.disabled = true;
            AlertError { rule: rule.id.clone(), entity: dp.entity_id.clone(), source: e }
        };
        let ts = dp.timestamp;
        let kind = if self.active {
            match rule.predicate.cleared(&dp.value, rule.clear_margin) {
                Err(e) => return Err(disable(self, e)),
                Ok(false) => return Ok(None),
                Ok(true) => {
                    self.active = false;
                    self.run_start = None;
                    EventKind::Recovered
                }
            }
        } else {
            match rule.predicate.holds(&dp.value) {
                Err(e) => return Err(disable(self, e)),
                Ok(false) => {
                    self.run_start = None;
                    return Ok(None);
                }
                Ok(true) => {
                    let start = *self.run_start.get_or_insert(ts);
                    let held = secs_between(ts, start) >= rule.for_duration;
                    let cooled = self.last_fired.map_or(true, |f| secs_between(ts, f) >= rule.cooldown);
                    if !(held && cooled) {
                        return Ok(None);
                    }
                    self.active = true;
                    self.last_fired = Some(ts);
                    EventKind::Fired
                }
            }
        };
        Ok(Some(AlertEvent {
            rule: rule.id.clone(),
            entity: dp.entity_id.clone(),
            parameter: dp.parameter.clone(),
            kind,
            value: dp.value.clone(),
            timestamp: ts,
        }))
    }
}

#[derive(Debug, Default)]
pub struct AlertStats {
    pub evaluated: AtomicU64,
    pub fired: AtomicU64,
    pub recovered: AtomicU64,
    pub disabled: AtomicU64,
    /// Events dropped because the notifier queue was full.
    pub dropped: AtomicU64,
    pub delivered: AtomicU64,
    pub failed: AtomicU64,
}

type StateMap = HashMap<(usize, String), RuleState>;

/// All rules, with per-(rule, entity) state partitioned by entity.
pub struct AlertEngine {
    rules: Vec<AlertRule>,
    shards: Vec<Mutex<StateMap>>,
    problems: Mutex<Vec<AlertError>>,
    stats: Arc<AlertStats>,
    events: Option<mpsc::Sender<AlertEvent>>,
}

impl AlertEngine {
    pub fn new(rules: Vec<AlertRule>) -> Self {
        AlertEngine {
            rules,
            shards: (0..8).map(|_| Mutex::new(HashMap::new())).collect(),
            problems: Mutex::new(Vec::new()),
            stats: Arc::new(AlertStats::default()),
            events: None,
        }
    }

    /// Forwards events to `tx` when used as an [`Inlet`].
    pub fn with_sink(mut self, tx: mpsc::Sender<AlertEvent>) -> Self {
        self.events = Some(tx);
        self
    }

    pub fn rules(&self) -> &[AlertRule] {
        &self.rules
    }

    pub fn stats(&self) -> Arc<AlertStats> {
        self.stats.clone()
    }

    /// Rules disabled by a kind mismatch, in the order they were hit.
    pub fn problems(&self) -> Vec<AlertError> {
        self.problems.lock().unwrap().clone()
    }

    pub fn process(&self, dp: &DataPoint) -> Vec<AlertEvent> {
        let mut out = Vec::new();
        let mut h = DefaultHasher::new();
        dp.entity_id.hash(&mut h);
        let shard = &self.shards[(h.finish() % self.shards.len() as u64) as usize];
        let mut states = shard.lock().unwrap();
        for (i, rule) in self.rules.iter().enumerate() {
            if !rule.applies_to(dp) {
                continue;
            }
            self.stats.evaluated.fetch_add(1, Ordering::Relaxed);
            let state = states.entry((i, dp.entity_id.clone())).or_default();
            match state.evaluate(rule, dp) {
                Ok(Some(ev)) => {
                    let c = match ev.kind {
                        EventKind::Fired => &self.stats.fired,
                        EventKind::Recovered => &self.stats.recovered,
                    };
                    c.fetch_add(1, Ordering::Relaxed);
                    out.push(ev);
                }
                Ok(None) => {}
                Err(e) => {
                    tracing::warn!(rule = %e.rule, entity = %e.entity, error = %e.source, "alert rule disabled");
                    self.stats.disabled.fetch_add(1, Ordering::Relaxed);
                    self.problems.lock().unwrap().push(e);
                }
            }
        }
        out
    }
}

impl Inlet for AlertEngine {
    fn submit(&self, dp: DataPoint) {
        for ev in self.process(&dp) {
            if let Some(tx) = &self.events {
                if tx.try_send(ev).is_err() {
                    self.stats.dropped.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }
}
