//! The single YAML document describing a gateway deployment.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use gateway_alerts::{AlertRule, Notifier};
use gateway_bacnet::{BacnetEndpoint, ObjectRef};
use gateway_core::{DataPoint, DeviceSpec, ParameterSpec, Protocol, Timestamp};
use gateway_ingest::{BrokerConfig, HttpPollSpec, TopicBinding};
use gateway_modbus::{maps, ConnectionPolicy, HistoricalConfig, ModbusBinding, ModbusDevice};
use gateway_pipeline::SinkConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::substitute;
use crate::simulate::SimulatorSection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySettings {
    /// Seconds after which an unchanged value is stored again; 0 disables.
    pub heartbeat_secs: u64,
    /// Fraction of the poll interval added as random phase each poll.
    pub schedule_jitter: f64,
    pub health_addr: String,
    /// Required as a bearer token when set; mandatory off loopback.
    pub health_token: Option<String>,
    pub stats_file: Option<PathBuf>,
    pub stats_interval_secs: f64,
    pub drain_timeout_secs: f64,
    pub shards: usize,
    pub seed: u64,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        GatewaySettings {
            heartbeat_secs: gateway_core::DEFAULT_HEARTBEAT_SECS,
            schedule_jitter: 0.1,
            health_addr: "127.0.0.1:9100".into(),
            health_token: None,
            stats_file: None,
            stats_interval_secs: 60.0,
            drain_timeout_secs: 10.0,
            shards: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModbusSection {
    pub host: String,
    #[serde(default = "default_unit")]
    pub unit: u8,
    /// Built-in register map name.
    #[serde(default)]
    pub map: Option<String>,
    /// Explicit bindings; parameters must be declared on the device.
    #[serde(default)]
    pub bindings: Vec<ModbusBinding>,
    #[serde(default)]
    pub policy: ConnectionPolicy,
    /// Historical-block handshake instead of plain reads. Empty
    /// `data_bindings` default to the map's bindings.
    #[serde(default)]
    pub historical: Option<HistoricalConfig>,
    /// Which day's block a historical poll requests, counted back from today
    /// (UTC).
    #[serde(default = "default_days_back")]
    pub historical_days_back: u32,
}

fn default_days_back() -> u32 {
    1
}

fn default_unit() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacnetPoint {
    pub object: ObjectRef,
    /// Parameter name; defaults to `{object_type}-{instance}`.
    #[serde(default)]
    pub parameter: Option<String>,
    #[serde(default)]
    pub unit: String,
}

impl BacnetPoint {
    pub fn parameter_name(&self) -> String {
        self.parameter.clone().unwrap_or_else(|| format!("{}-{}", self.object.object_type, self.object.instance))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacnetSection {
    pub endpoint: BacnetEndpoint,
    #[serde(default)]
    pub objects: Vec<BacnetPoint>,
    /// Read every object in the device's object list, named by object-name.
    #[serde(default)]
    pub discover: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub id: String,
    pub protocol: Protocol,
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    #[serde(default)]
    pub poll_interval: Option<f64>,
    #[serde(default)]
    pub parameters: Vec<ParameterSpec>,
    #[serde(default)]
    pub modbus: Option<ModbusSection>,
    #[serde(default)]
    pub bacnet: Option<BacnetSection>,
}

impl DeviceConfig {
    pub fn spec(&self) -> DeviceSpec {
        DeviceSpec {
            device_id: self.id.clone(),
            protocol: self.protocol,
            kind: self.kind.clone(),
            tags: self.tags.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            poll_interval: self.poll_interval,
            parameters: self.parameters.clone(),
        }
    }

    /// Parameters known before the first poll.
    pub fn parameter_names(&self) -> Vec<String> {
        if let Some(m) = &self.modbus {
            if let Some(map) = m.map.as_deref().and_then(maps::by_name) {
                return map.parameters.into_iter().map(|p| p.name).collect();
            }
        }
        if let Some(b) = &self.bacnet {
            if !b.objects.is_empty() {
                return b.objects.iter().map(BacnetPoint::parameter_name).collect();
            }
        }
        self.parameters.iter().map(|p| p.name.clone()).collect()
    }

    /// Modbus device with its bindings resolved.
    pub fn modbus_device(&self) -> Option<ModbusDevice> {
        let m = self.modbus.as_ref()?;
        let spec = self.spec();
        Some(match m.map.as_deref().and_then(maps::by_name) {
            Some(map) => ModbusDevice::from_map(spec, m.host.clone(), m.unit, map),
            None => ModbusDevice { spec, host: m.host.clone(), unit_id: m.unit, bindings: m.bindings.clone() },
        })
    }

    /// Historical config with data bindings defaulted from the device.
    pub fn historical(&self) -> Option<HistoricalConfig> {
        let m = self.modbus.as_ref()?;
        let mut h = m.historical.clone()?;
        if h.data_bindings.is_empty() {
            h.data_bindings = self.modbus_device().map(|d| d.bindings).unwrap_or_default();
        }
        Some(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerSection {
    pub broker: BrokerConfig,
    pub bindings: Vec<TopicBinding>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlertSection {
    pub rules: Vec<AlertRule>,
    pub notifiers: Vec<Notifier>,
    /// Capacity of the queue between rule evaluation and notifiers.
    pub queue: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub gateway: GatewaySettings,
    #[serde(default)]
    pub devices: Vec<DeviceConfig>,
    #[serde(default)]
    pub brokers: Vec<BrokerSection>,
    #[serde(default)]
    pub http_polls: Vec<HttpPollSpec>,
    pub sink: SinkConfig,
    #[serde(default)]
    pub alerts: AlertSection,
    #[serde(default)]
    pub simulators: Option<SimulatorSection>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{}", located(*.line, message))]
    Parse { line: Option<usize>, message: String },
    #[error("{}", located(*.line, message))]
    UnknownField { line: Option<usize>, message: String },
    #[error("{} problem(s) in configuration:\n{}", .0.len(), bullet(.0))]
    Invalid(Vec<String>),
}

fn located(line: Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("line {l}: {message}"),
        None => message.to_string(),
    }
}

fn bullet(items: &[String]) -> String {
    items.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n")
}

/// A validated configuration plus non-fatal findings.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: GatewayConfig,
    pub warnings: Vec<String>,
}

pub fn load_config(path: &Path) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    parse_config(&text, |name| std::env::var(name).ok())
}

pub fn parse_config(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<Loaded, ConfigError> {
    let (resolved, missing) = substitute(text, lookup);
    let mut problems: Vec<String> = missing
        .iter()
        .map(|m| format!("environment variable `{}` (line {}) is not set", m.name, m.line))
        .collect();
    let config: GatewayConfig = match serde_yaml::from_str(&resolved) {
        Ok(c) => c,
        Err(e) => {
            if !problems.is_empty() {
                problems.push(format!("and the document does not parse: {e}"));
                return Err(ConfigError::Invalid(problems));
            }
            let line = e.location().map(|l| l.line());
            let message = e.to_string();
            return Err(if message.contains("unknown field") {
                ConfigError::UnknownField { line, message }
            } else {
                ConfigError::Parse { line, message }
            });
        }
    };
    let (errors, warnings) = validate(&config);
    problems.extend(errors);
    if problems.is_empty() {
        Ok(Loaded { config, warnings })
    } else {
        Err(ConfigError::Invalid(problems))
    }
}

/// Every invariant violation (errors) and every suspicious but legal setting
/// (warnings).
pub fn validate(cfg: &GatewayConfig) -> (Vec<String>, Vec<String>) {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let g = &cfg.gateway;

    if !(0.0..1.0).contains(&g.schedule_jitter) {
        errors.push(format!("gateway.schedule_jitter {} must be in [0, 1)", g.schedule_jitter));
    }
    match g.health_addr.parse::<SocketAddr>() {
        Ok(a) if !a.ip().is_loopback() && g.health_token.is_none() => {
            errors.push(format!("gateway.health_addr {a} is not loopback, so gateway.health_token is required"))
        }
        Ok(_) => {}
        Err(_) => errors.push(format!("gateway.health_addr `{}` is not an ip:port address", g.health_addr)),
    }
    if matches!(&g.health_token, Some(t) if t.is_empty()) {
        errors.push("gateway.health_token is empty".into());
    }
    for (name, v) in [("stats_interval_secs", g.stats_interval_secs), ("drain_timeout_secs", g.drain_timeout_secs)] {
        if !(v.is_finite() && v > 0.0) {
            errors.push(format!("gateway.{name} must be positive"));
        }
    }
    if g.shards == 0 {
        errors.push("gateway.shards must be at least 1".into());
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, d) in cfg.devices.iter().enumerate() {
        if let Some(first) = seen.insert(d.id.as_str(), i) {
            errors.push(format!("duplicate device id `{}`: devices[{first}] and devices[{i}]", d.id));
        }
        validate_device(i, d, &mut errors, &mut warnings);
    }

    for (i, b) in cfg.brokers.iter().enumerate() {
        if let Err(e) = b.broker.validate() {
            errors.push(format!("brokers[{i}]: {e}"));
        }
        if b.bindings.is_empty() {
            errors.push(format!("brokers[{i}]: no topic bindings"));
        }
        for (j, t) in b.bindings.iter().enumerate() {
            if let Err(e) = t.validate() {
                errors.push(format!("brokers[{i}].bindings[{j}]: {e}"));
            }
        }
    }
    for (i, h) in cfg.http_polls.iter().enumerate() {
        if let Err(e) = h.validate() {
            errors.push(format!("http_polls[{i}]: {e}"));
        }
    }
    for e in cfg.sink.validate() {
        errors.push(format!("sink: {e}"));
    }

    let mut rule_ids: HashMap<&str, usize> = HashMap::new();
    for (i, r) in cfg.alerts.rules.iter().enumerate() {
        if let Some(first) = rule_ids.insert(r.id.as_str(), i) {
            errors.push(format!("duplicate alert rule id `{}`: alerts.rules[{first}] and alerts.rules[{i}]", r.id));
        }
        for e in r.validate() {
            errors.push(format!("alerts.rules[{i}] `{}`: {e}", r.id));
        }
        if !cfg.devices.iter().any(|d| rule_matches_device(r, d)) {
            warnings.push(format!(
                "alert rule `{}` matches no declared device with parameter `{}`",
                r.id, r.parameter
            ));
        }
    }
    if cfg.alerts.queue == Some(0) {
        errors.push("alerts.queue must be at least 1".into());
    }
    for (i, n) in cfg.alerts.notifiers.iter().enumerate() {
        if let Err(e) = n.validate() {
            errors.push(format!("alerts.notifiers[{i}]: {e}"));
        }
    }
    if !cfg.alerts.rules.is_empty() && cfg.alerts.notifiers.is_empty() {
        warnings.push("alert rules are defined but no notifier is configured; events are only counted".into());
    }
    if let Some(sims) = &cfg.simulators {
        errors.extend(sims.validate());
    }
    (errors, warnings)
}

fn rule_matches_device(rule: &AlertRule, d: &DeviceConfig) -> bool {
    d.parameter_names().iter().any(|p| {
        let mut dp = DataPoint::new(d.id.clone(), p.clone(), 0.0, Timestamp(0));
        dp.tags = d.tags.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        rule.applies_to(&dp)
    })
}

fn validate_device(i: usize, d: &DeviceConfig, errors: &mut Vec<String>, warnings: &mut Vec<String>) {
    let at = format!("devices[{i}] `{}`", d.id);
    for e in d.spec().validate() {
        errors.push(format!("devices[{i}]: {e}"));
    }
    match (d.protocol, &d.modbus, &d.bacnet) {
        (Protocol::Modbus, Some(m), None) => {
            if let Err(e) = m.policy.validate() {
                errors.push(format!("{at}: connection policy: {e}"));
            }
            match (&m.map, m.bindings.is_empty()) {
                (Some(name), true) if maps::by_name(name).is_none() => {
                    errors.push(format!("{at}: unknown register map `{name}`"))
                }
                (Some(_), false) => errors.push(format!("{at}: give either `map` or `bindings`, not both")),
                (None, true) => errors.push(format!("{at}: needs a register `map` or `bindings`")),
                (None, false) => {
                    for b in &m.bindings {
                        if d.spec().parameter(&b.parameter).is_none() {
                            errors.push(format!("{at}: binding references undeclared parameter `{}`", b.parameter));
                        }
                        if let Err(e) = b.validate() {
                            errors.push(format!("{at}: {e}"));
                        }
                    }
                }
                _ => {}
            }
            if m.map.is_some() && !d.parameters.is_empty() {
                warnings.push(format!("{at}: `parameters` are ignored when a register map is used"));
            }
            if let Some(h) = d.historical() {
                if h.data_bindings.is_empty() {
                    errors.push(format!("{at}: historical read has no data bindings"));
                }
                if h.max_polls == 0 {
                    errors.push(format!("{at}: historical max_polls must be at least 1"));
                }
                for b in &h.data_bindings {
                    if let Err(e) = b.validate() {
                        errors.push(format!("{at}: historical binding: {e}"));
                    }
                }
            }
        }
        (Protocol::Bacnet, None, Some(b)) => {
            if let Err(e) = b.endpoint.validate() {
                errors.push(format!("{at}: {e}"));
            }
            if b.objects.is_empty() && !b.discover {
                errors.push(format!("{at}: list `objects` or set `discover: true`"));
            }
            let mut names: Vec<String> = b.objects.iter().map(BacnetPoint::parameter_name).collect();
            names.sort();
            if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
                errors.push(format!("{at}: BACnet parameter `{}` is mapped twice", w[0]));
            }
        }
        (Protocol::Mqtt | Protocol::Http, None, None) => {}
        (p, _, _) => {
            let want = match p {
                Protocol::Modbus => "exactly a `modbus` section",
                Protocol::Bacnet => "exactly a `bacnet` section",
                _ => "no `modbus` or `bacnet` section; push devices are fed by brokers and http_polls",
            };
            errors.push(format!("{at}: protocol {p} needs {want}"));
        }
    }
}
