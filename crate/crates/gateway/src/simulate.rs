//! Simulated devices described in YAML, for demos and end-to-end tests.

use std::collections::HashSet;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use gateway_modbus::maps;
use gateway_sim::{
    run_bacnet_sim, run_mqtt_fleet, BacnetSimConfig, BacnetSimHandle, FaultModel, FleetBroker, FleetHandle, ModbusSim,
    ModbusSimHandle, Registers, SimClock, SimError, SimFleet, SimObject, ValueModel,
};
use gateway_testkit::{BrokerOptions, TestBroker};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModbusSimSpec {
    pub bind: String,
    pub map: String,
    /// Register address the map starts at.
    #[serde(default)]
    pub base: u16,
    #[serde(default)]
    pub fault: Option<FaultModel>,
    #[serde(default)]
    pub seed: u64,
    /// Animates every register of the map; fixed random values otherwise.
    #[serde(default)]
    pub model: Option<ValueModel>,
    #[serde(default = "default_tick_ms")]
    pub tick_ms: u64,
}

fn default_tick_ms() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacnetSimSpec {
    pub bind: String,
    pub device_instance: u32,
    pub device_name: String,
    /// Analog inputs generated as `"{prefix} {i}"`.
    #[serde(default)]
    pub analog_inputs: u32,
    #[serde(default = "default_prefix")]
    pub prefix: String,
    #[serde(default)]
    pub objects: Vec<SimObject>,
    #[serde(default)]
    pub max_response: Option<usize>,
    #[serde(default = "default_tick_secs")]
    pub tick_secs: f64,
}

fn default_prefix() -> String {
    "Point".into()
}

fn default_tick_secs() -> f64 {
    5.0
}

impl BacnetSimSpec {
    pub fn sim_config(&self) -> BacnetSimConfig {
        let mut cfg = BacnetSimConfig::inventory(self.device_instance, &self.device_name, &self.prefix, self.analog_inputs);
        cfg.objects.extend(self.objects.iter().cloned());
        if let Some(m) = self.max_response {
            cfg.max_response = m;
        }
        cfg.tick_secs = self.tick_secs;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSimSpec {
    #[serde(default = "default_host")]
    pub broker_host: String,
    pub broker_port: u16,
    /// Start an in-process broker on `broker_host:broker_port` first.
    #[serde(default)]
    pub embedded_broker: bool,
    pub fleet: SimFleet,
}

fn default_host() -> String {
    "127.0.0.1".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorSection {
    pub modbus: Vec<ModbusSimSpec>,
    pub bacnet: Vec<BacnetSimSpec>,
    pub fleet: Option<FleetSimSpec>,
}

impl SimulatorSection {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let mut binds = HashSet::new();
        for (i, m) in self.modbus.iter().enumerate() {
            if maps::by_name(&m.map).is_none() {
                errors.push(format!("simulators.modbus[{i}]: unknown register map `{}`", m.map));
            }
            if let Some(model) = &m.model {
                if let Err(e) = model.validate() {
                    errors.push(format!("simulators.modbus[{i}]: {e}"));
                }
            }
            if m.tick_ms == 0 {
                errors.push(format!("simulators.modbus[{i}]: tick_ms must be positive"));
            }
            if !binds.insert(("tcp", m.bind.clone())) && !m.bind.ends_with(":0") {
                errors.push(format!("simulators.modbus[{i}]: address {} is used twice", m.bind));
            }
        }
        for (i, b) in self.bacnet.iter().enumerate() {
            if let Err(e) = b.sim_config().validate() {
                errors.push(format!("simulators.bacnet[{i}]: {e}"));
            }
            if !binds.insert(("udp", b.bind.clone())) && !b.bind.ends_with(":0") {
                errors.push(format!("simulators.bacnet[{i}]: address {} is used twice", b.bind));
            }
        }
        if let Some(f) = &self.fleet {
            if let Err(e) = f.fleet.validate() {
                errors.push(format!("simulators.fleet: {e}"));
            }
        }
        errors
    }

    pub fn is_empty(&self) -> bool {
        self.modbus.is_empty() && self.bacnet.is_empty() && self.fleet.is_none()
    }
}

pub struct RunningSims {
    pub modbus: Vec<(String, ModbusSimHandle)>,
    pub bacnet: Vec<(String, BacnetSimHandle)>,
    pub broker: Option<TestBroker>,
    pub fleet: Option<FleetHandle>,
}

impl RunningSims {
    pub fn describe(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (map, h) in &self.modbus {
            out.push(format!("modbus {map} on tcp {}", h.addr()));
        }
        for (name, h) in &self.bacnet {
            out.push(format!("bacnet {name} on udp {}", h.addr()));
        }
        if let Some(b) = &self.broker {
            out.push(format!("mqtt broker on tcp {}", b.addr()));
        }
        if let Some(f) = &self.fleet {
            out.push(format!("fleet running, {} emissions so far", f.stats().emissions.load(Ordering::Relaxed)));
        }
        out
    }

    pub fn stop(&self) {
        self.modbus.iter().for_each(|(_, h)| h.stop());
        self.bacnet.iter().for_each(|(_, h)| h.stop());
        if let Some(f) = &self.fleet {
            f.stop();
        }
        if let Some(b) = &self.broker {
            b.stop();
        }
    }
}

pub async fn start_modbus_sim(spec: &ModbusSimSpec) -> Result<ModbusSimHandle, SimError> {
    let map = maps::by_name(&spec.map).ok_or_else(|| SimError::Config(format!("unknown register map `{}`", spec.map)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut regs = Registers::default();
    regs.load_map(&map, spec.base, |_| rng.gen_range(0.0..1000.0));
    let mut sim = ModbusSim::new(regs).fault(spec.fault.clone().unwrap_or(FaultModel::None));
    if let Some(model) = &spec.model {
        for (i, b) in map.bindings.iter().enumerate() {
            sim = sim.animate(b.clone(), spec.base, model, spec.seed.wrapping_add(i as u64))?;
        }
        sim = sim.tick_every(Duration::from_millis(spec.tick_ms));
    }
    sim.start(&spec.bind).await
}

pub async fn start_all(section: &SimulatorSection) -> Result<RunningSims, SimError> {
    let errors = section.validate();
    if !errors.is_empty() {
        return Err(SimError::Config(errors.join("; ")));
    }
    let mut running = RunningSims { modbus: Vec::new(), bacnet: Vec::new(), broker: None, fleet: None };
    for m in &section.modbus {
        running.modbus.push((m.map.clone(), start_modbus_sim(m).await?));
    }
    for b in &section.bacnet {
        running.bacnet.push((b.device_name.clone(), run_bacnet_sim(b.sim_config(), &b.bind).await?));
    }
    if let Some(f) = &section.fleet {
        if f.embedded_broker {
            let addr = format!("{}:{}", f.broker_host, f.broker_port);
            let sock = addr.parse().map_err(|_| SimError::Config(format!("broker address {addr} is not ip:port")))?;
            let broker = TestBroker::start_on(sock, BrokerOptions::default())
                .await
                .map_err(|e| SimError::BindFailure { addr, reason: e.to_string() })?;
            running.broker = Some(broker);
        }
        let port = running.broker.as_ref().map_or(f.broker_port, |b| b.port());
        let clock = Arc::new(SimClock::starting_now(f.fleet.time_compression));
        running.fleet = Some(run_mqtt_fleet(FleetBroker::new(f.broker_host.clone(), port), &f.fleet, clock)?);
    }
    Ok(running)
}
