//! Fleets of simulated MQTT sensors publishing JSON on a compressed clock.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use gateway_core::Timestamp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rumqttc::{AsyncClient, Event, MqttOptions, Packet, QoS};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use tokio::task::JoinHandle;
use tracing::{debug, warn};

use crate::clock::SimClock;
use crate::value::{ValueModel, ValueSource};
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetParameter {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    pub model: ValueModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetClass {
    pub kind: String,
    pub count: u32,
    /// Simulated seconds between emissions.
    pub interval_secs: f64,
    /// Probability that a parameter takes a new value at an emission.
    pub change_probability: f64,
    pub parameters: Vec<FleetParameter>,
    /// Topic template; `{id}` is the device id, `{kind}` the class kind.
    #[serde(default = "default_topic")]
    pub topic: String,
    /// Device ids are `{id_prefix}-{n:03}`; defaults to the kind.
    #[serde(default)]
    pub id_prefix: Option<String>,
}

fn default_topic() -> String {
    "sim/{kind}/{id}".into()
}

fn default_compression() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFleet {
    pub classes: Vec<FleetClass>,
    #[serde(default = "default_compression")]
    pub time_compression: f64,
    #[serde(default)]
    pub seed: u64,
}

/// JSON key holding the emission time in simulated epoch milliseconds.
pub const TIMESTAMP_KEY: &str = "ts";

impl FleetClass {
    /// Aranet4 Pro style indoor air sensors: six parameters every minute.
    pub fn aranet(count: u32, change_probability: f64) -> Self {
        let walk = |start: f64, step: f64, min: f64, max: f64| ValueModel::RandomWalk { start, step, min, max, seed: 0 };
        let p = |name: &str, unit: &str, model| FleetParameter { name: name.into(), unit: unit.into(), model };
        FleetClass {
            kind: "aranet".into(),
            count,
            interval_secs: 60.0,
            change_probability,
            parameters: vec![
                p("CO2", "ppm", walk(600.0, 25.0, 400.0, 3000.0)),
                p("temperature", "°C", walk(21.0, 0.1, 15.0, 30.0)),
                p("humidity", "%", walk(45.0, 0.5, 10.0, 90.0)),
                p("pressure", "hPa", walk(1013.0, 0.2, 950.0, 1050.0)),
                p("battery", "%", walk(90.0, 0.5, 5.0, 100.0)),
                p("rssi", "dBm", walk(-70.0, 1.0, -100.0, -40.0)),
            ],
            topic: default_topic(),
            id_prefix: None,
        }
    }

    pub fn device_id(&self, n: u32) -> String {
        format!("{}-{n:03}", self.id_prefix.as_deref().unwrap_or(&self.kind))
    }

    pub fn topic_for(&self, id: &str) -> String {
        self.topic.replace("{kind}", &self.kind).replace("{id}", id)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(format!("fleet class `{}`: {m}", self.kind)));
        if self.kind.is_empty() {
            return Err(SimError::Config("fleet class with empty kind".into()));
        }
        if !(self.interval_secs.is_finite() && self.interval_secs > 0.0) {
            return bad("interval_secs must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.change_probability) {
            return bad(format!("change_probability {} outside [0, 1]", self.change_probability));
        }
        if self.parameters.is_empty() {
            return bad("no parameters".into());
        }
        let mut names: Vec<&str> = self.parameters.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&TIMESTAMP_KEY) {
            return bad("parameter names must be unique and not `ts`".into());
        }
        if !self.topic.contains("{id}") && self.count > 1 {
            return bad("topic must contain {id}".into());
        }
        for p in &self.parameters {
            p.model.validate()?;
        }
        Ok(())
    }
}

impl SimFleet {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.time_compression.is_finite() && self.time_compression > 0.0) {
            return Err(SimError::Config("time_compression must be positive".into()));
        }
        self.classes.iter().try_for_each(FleetClass::validate)
    }

    pub fn device_count(&self) -> u32 {
        self.classes.iter().map(|c| c.count).sum()
    }
}

/// Per-device parameter state: emits current values and changes each with
/// the configured probability.
pub struct DeviceState {
    names: Vec<String>,
    sources: Vec<ValueSource>,
    p: f64,
    rng: ChaCha8Rng,
    emitted: u64,
}

impl DeviceState {
    pub fn new(class: &FleetClass, device_seed: u64) -> Result<Self, SimError> {
        let sources = class
            .parameters
            .iter()
            .enumerate()
            .map(|(i, p)| p.model.source(device_seed.wrapping_mul(31).wrapping_add(i as u64)))
            .collect::<Result<_, _>>()?;
        Ok(DeviceState {
            names: class.parameters.iter().map(|p| p.name.clone()).collect(),
            sources,
            p: class.change_probability,
            rng: ChaCha8Rng::seed_from_u64(device_seed),
            emitted: 0,
        })
    }

    /// Values for the next emission and how many of them changed. The first
    /// emission reports every value as new.
    pub fn step(&mut self) -> (Vec<(String, f64)>, usize) {
        let first = self.emitted == 0;
        self.emitted += 1;
        let mut changed = 0;
        for s in &mut self.sources {
            if first {
                changed += 1;
            } else if self.rng.gen_bool(self.p) {
                let before = s.current();
                for _ in 0..16 {
                    if s.next() != before {
                        changed += 1;
                        break;
                    }
                }
            }
        }
        let values = self.names.iter().cloned().zip(self.sources.iter().map(ValueSource::current)).collect();
        (values, changed)
    }
}

pub fn payload(values: &[(String, f64)], at: Timestamp) -> Vec<u8> {
    let mut doc = Map::new();
    for (k, v) in values {
        doc.insert(k.clone(), Json::from(*v));
    }
    doc.insert(TIMESTAMP_KEY.into(), Json::from(at.as_nanos() / 1_000_000));
    serde_json::to_vec(&doc).expect("finite values serialize")
}

#[derive(Debug, Clone)]
pub struct FleetBroker {
    pub host: String,
    pub port: u16,
    pub client_id: String,
    pub credentials: Option<(String, String)>,
}

impl FleetBroker {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        FleetBroker { host: host.into(), port, client_id: "gateway-sim".into(), credentials: None }
    }
}

#[derive(Debug, Default)]
pub struct FleetStats {
    pub emissions: AtomicU64,
    /// Parameter values that differed from the previous emission, first
    /// emissions included.
    pub changes: AtomicU64,
    pub publish_errors: AtomicU64,
}

pub struct FleetHandle {
    stats: Arc<FleetStats>,
    tasks: Vec<JoinHandle<()>>,
}

impl FleetHandle {
    pub fn stats(&self) -> &FleetStats {
        &self.stats
    }

    pub fn stop(&self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

impl Drop for FleetHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts one task per device plus the shared MQTT connection. Device `i`
/// emits at `start + phase_i + k * interval` in simulated time.
pub fn run_mqtt_fleet(broker: FleetBroker, fleet: &SimFleet, clock: Arc<SimClock>) -> Result<FleetHandle, SimError> {
    fleet.validate()?;
    let mut opts = MqttOptions::new(broker.client_id.clone(), broker.host.clone(), broker.port);
    opts.set_keep_alive(Duration::from_secs(30));
    opts.set_max_packet_size(1 << 20, 1 << 20);
    if let Some((u, p)) = &broker.credentials {
        opts.set_credentials(u.clone(), p.clone());
    }
    let (client, mut eventloop) = AsyncClient::new(opts, 1024);
    let stats = Arc::new(FleetStats::default());
    let mut tasks = Vec::new();

    tasks.push(tokio::spawn(async move {
        loop {
            match eventloop.poll().await {
                Ok(Event::Incoming(Packet::ConnAck(_))) => debug!("fleet connected"),
                Ok(_) => {}
                Err(e) => {
                    warn!(error = %e, "fleet connection lost");
                    tokio::time::sleep(Duration::from_millis(200)).await;
                }
            }
        }
    }));

    let mut seeder = ChaCha8Rng::seed_from_u64(fleet.seed);
    for class in &fleet.classes {
        for n in 0..class.count {
            let device_seed: u64 = seeder.gen();
            let mut state = DeviceState::new(class, device_seed)?;
            let phase = seeder.gen::<f64>() * class.interval_secs;
            let id = class.device_id(n);
            let topic = class.topic_for(&id);
            let interval = class.interval_secs;
            let (client, clock, stats) = (client.clone(), clock.clone(), stats.clone());
            tasks.push(tokio::spawn(async move {
                let first = clock.start().add_secs(phase);
                for k in 0u64.. {
                    let at = first.add_secs(k as f64 * interval);
                    clock.sleep_until(at).await;
                    let (values, changed) = state.step();
                    stats.emissions.fetch_add(1, Ordering::Relaxed);
                    stats.changes.fetch_add(changed as u64, Ordering::Relaxed);
                    if let Err(e) = client.publish(topic.as_str(), QoS::AtLeastOnce, false, payload(&values, at)).await {
                        stats.publish_errors.fetch_add(1, Ordering::Relaxed);
                        debug!(device = %id, error = %e, "publish failed");
                    }
                }
            }));
        }
    }
    Ok(FleetHandle { stats, tasks })
}
