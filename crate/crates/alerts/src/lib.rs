//! Threshold alerting over the point stream.

mod engine;
mod notify;
mod rule;

pub use engine::{AlertEngine, AlertError, AlertEvent, AlertStats, EventKind, RuleState};
pub use notify::{event_json, render_mail, render_template, run_notifiers, Dispatcher, Notifier, NotifyError};
pub use rule::{AlertRule, Predicate, RuleError, Selector, TypeMismatch};
