use gateway_core::{DataPoint, Value};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which entities a rule applies to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Exact(String),
    Tag { key: String, value: String },
    /// Glob over the entity id: `*` matches any run, `?` one character.
    Wildcard(String),
}

impl Selector {
    pub fn matches(&self, dp: &DataPoint) -> bool {
        match self {
            Selector::Exact(id) => dp.entity_id == *id,
            Selector::Tag { key, value } => dp.tag(key) == Some(value.as_str()),
            Selector::Wildcard(p) => glob(p, &dp.entity_id),
        }
    }
}

fn glob(pattern: &str, s: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = s.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|c| *c == '*')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Gt(f64),
    Lt(f64),
    Eq(Value),
    FlagTrue,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("predicate {predicate} cannot be applied to a {found} value")]
pub struct TypeMismatch {
    pub predicate: &'static str,
    pub found: &'static str,
}

impl Predicate {
    pub fn name(&self) -> &'static str {
        match self {
            Predicate::Gt(_) => "gt",
            Predicate::Lt(_) => "lt",
            Predicate::Eq(_) => "eq",
            Predicate::FlagTrue => "flag_true",
        }
    }

    fn mismatch(&self, v: &Value) -> TypeMismatch {
        TypeMismatch { predicate: self.name(), found: v.kind_name() }
    }

    pub fn holds(&self, v: &Value) -> Result<bool, TypeMismatch> {
        match (self, v) {
            (Predicate::Gt(t), Value::Real(x)) => Ok(x > t),
            (Predicate::Lt(t), Value::Real(x)) => Ok(x < t),
            (Predicate::FlagTrue, Value::Flag(b)) => Ok(*b),
            (Predicate::Eq(Value::Real(a)), Value::Real(b)) => Ok(a == b),
            (Predicate::Eq(want), got) if want.kind_name() == got.kind_name() => Ok(want.same_as(got)),
            _ => Err(self.mismatch(v)),
        }
    }

    /// True once the value is back on the safe side of the hysteresis band.
    /// For `gt(T)` that is below `T - |T| * margin`, i.e. `T * (1 - margin)`
    /// for positive thresholds.
    pub fn cleared(&self, v: &Value, margin: f64) -> Result<bool, TypeMismatch> {
        match (self, v) {
            (Predicate::Gt(t), Value::Real(x)) => Ok(*x < t - t.abs() * margin),
            (Predicate::Lt(t), Value::Real(x)) => Ok(*x > t + t.abs() * margin),
            _ => self.holds(v).map(|h| !h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertRule {
    pub id: String,
    pub selector: Selector,
    pub parameter: String,
    pub predicate: Predicate,
    /// Seconds the predicate must hold on consecutive points before firing.
    #[serde(default)]
    pub for_duration: f64,
    /// Minimum seconds between two fired events.
    #[serde(default)]
    pub cooldown: f64,
    #[serde(default)]
    pub clear_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("rule id is empty")]
    EmptyId,
    #[error("rule `{0}`: parameter is empty")]
    EmptyParameter(String),
    #[error("rule `{0}`: threshold is not finite")]
    Threshold(String),
    #[error("rule `{0}`: for_duration and cooldown must be finite and >= 0")]
    Duration(String),
    #[error("rule `{0}`: clear_margin must be in [0, 1)")]
    Margin(String),
    #[error("rule `{0}`: selector is empty")]
    Selector(String),
}

impl AlertRule {
    pub fn new(id: impl Into<String>, selector: Selector, parameter: impl Into<String>, predicate: Predicate) -> Self {
        AlertRule {
            id: id.into(),
            selector,
            parameter: parameter.into(),
            predicate,
            for_duration: 0.0,
            cooldown: 0.0,
            clear_margin: 0.0,
        }
    }

    pub fn with_timing(mut self, for_duration: f64, cooldown: f64, clear_margin: f64) -> Self {
        self.for_duration = for_duration;
        self.cooldown = cooldown;
        self.clear_margin = clear_margin;
        self
    }

    pub fn applies_to(&self, dp: &DataPoint) -> bool {
        dp.parameter == self.parameter && self.selector.matches(dp)
    }

    pub fn validate(&self) -> Vec<RuleError> {
        let mut errs = Vec::new();
        let id = self.id.clone();
        if self.id.is_empty() {
            errs.push(RuleError::EmptyId);
        }
        if self.parameter.is_empty() {
            errs.push(RuleError::EmptyParameter(id.clone()));
        }
        let finite = match &self.predicate {
            Predicate::Gt(t) | Predicate::Lt(t) => t.is_finite(),
            Predicate::Eq(Value::Real(t)) => t.is_finite(),
            _ => true,
        };
        if !finite {
            errs.push(RuleError::Threshold(id.clone()));
        }
        let ok = |d: f64| d.is_finite() && d >= 0.0;
        if !ok(self.for_duration) || !ok(self.cooldown) {
            errs.push(RuleError::Duration(id.clone()));
        }
        if !(0.0..1.0).contains(&self.clear_margin) {
            errs.push(RuleError::Margin(id.clone()));
        }
        let empty = match &self.selector {
            Selector::Exact(s) | Selector::Wildcard(s) => s.is_empty(),
            Selector::Tag { key, .. } => key.is_empty(),
        };
        if empty {
            errs.push(RuleError::Selector(id));
        }
        errs
    }
}
