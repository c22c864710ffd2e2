//! BACnet/IP controller answering ReadPropertyMultiple over UDP.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use gateway_bacnet::server::{
    decode_rpm_request, encode_abort, encode_reject, encode_rpm_ack, AckObject, AckProperty, RawQuery,
};
use gateway_bacnet::types::{abort_reason, error_class, error_code};
use gateway_bacnet::{AppValue, ObjectRef, ObjectType, PropertyId, MAX_APDU};
use serde::{Deserialize, Serialize};
use tokio::net::UdpSocket;
use tokio::task::JoinHandle;

use crate::value::{ValueModel, ValueSource};
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimObject {
    pub object: ObjectRef,
    pub name: String,
    /// Engineering units enumeration, analog objects only.
    #[serde(default)]
    pub units: Option<u32>,
    #[serde(default)]
    pub model: ValueModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacnetSimConfig {
    pub device_instance: u32,
    pub device_name: String,
    pub objects: Vec<SimObject>,
    /// Responses larger than this many bytes are aborted with
    /// segmentation-not-supported.
    #[serde(default = "default_max_response")]
    pub max_response: usize,
    /// Seconds between value model steps; 0 keeps values fixed.
    #[serde(default)]
    pub tick_secs: f64,
}

fn default_max_response() -> usize {
    MAX_APDU
}

impl BacnetSimConfig {
    /// A controller exposing `n` analog inputs named `"{prefix} {i}"`, each a
    /// seeded random walk.
    pub fn inventory(device_instance: u32, device_name: &str, prefix: &str, n: u32) -> Self {
        let objects = (0..n)
            .map(|i| SimObject {
                object: ObjectRef::new(ObjectType::AnalogInput, i).expect("instance fits"),
                name: format!("{prefix} {i}"),
                units: Some(62),
                model: ValueModel::RandomWalk {
                    start: 20.0 + i as f64,
                    step: 0.25,
                    min: i as f64,
                    max: 40.0 + i as f64,
                    seed: i as u64,
                },
            })
            .collect();
        BacnetSimConfig {
            device_instance,
            device_name: device_name.to_string(),
            objects,
            max_response: MAX_APDU,
            tick_secs: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if ObjectRef::device(self.device_instance).is_none() {
            return Err(SimError::Config(format!("device instance {} out of range", self.device_instance)));
        }
        let mut seen = BTreeMap::new();
        for o in &self.objects {
            if o.object.object_type == ObjectType::Device {
                return Err(SimError::Config(format!("object `{}` cannot be a device", o.name)));
            }
            if seen.insert(o.object, ()).is_some() {
                return Err(SimError::Config(format!("duplicate object {}", o.object)));
            }
            o.model.validate()?;
        }
        if self.max_response < 64 {
            return Err(SimError::Config("max_response below 64 bytes".into()));
        }
        if !self.tick_secs.is_finite() || self.tick_secs < 0.0 {
            return Err(SimError::Config("tick_secs must be a non-negative number".into()));
        }
        Ok(())
    }
}

struct Point {
    name: String,
    units: Option<u32>,
    source: ValueSource,
}

impl Point {
    fn present_value(&self, t: ObjectType) -> AppValue {
        let v = self.source.current();
        if t.is_binary() {
            AppValue::Enumerated(u32::from(v != 0.0))
        } else {
            AppValue::Real(v as f32)
        }
    }
}

struct State {
    device: ObjectRef,
    device_name: String,
    objects: BTreeMap<ObjectRef, Point>,
}

impl State {
    fn object_list(&self) -> Vec<AppValue> {
        std::iter::once(self.device)
            .chain(self.objects.keys().copied())
            .map(|o| AppValue::ObjectId(o.encode()))
            .collect()
    }

    fn read(&self, object: u32, property: u32, index: Option<u32>) -> Result<Vec<AppValue>, (u32, u32)> {
        let unknown_object = (error_class::OBJECT, error_code::UNKNOWN_OBJECT);
        let unknown_property = (error_class::PROPERTY, error_code::UNKNOWN_PROPERTY);
        let oref = ObjectRef::decode(object).ok_or(unknown_object)?;
        let values = if oref == self.device {
            match property {
                p if p == PropertyId::ObjectList.code() => self.object_list(),
                p if p == PropertyId::ObjectName.code() => vec![AppValue::CharacterString(self.device_name.clone())],
                _ => return Err(unknown_property),
            }
        } else {
            let point = self.objects.get(&oref).ok_or(unknown_object)?;
            match property {
                p if p == PropertyId::PresentValue.code() => vec![point.present_value(oref.object_type)],
                p if p == PropertyId::ObjectName.code() => vec![AppValue::CharacterString(point.name.clone())],
                p if p == PropertyId::Units.code() => match point.units {
                    Some(u) if oref.object_type.is_analog() => vec![AppValue::Enumerated(u)],
                    _ => return Err(unknown_property),
                },
                _ => return Err(unknown_property),
            }
        };
        match index {
            None => Ok(values),
            Some(0) => Ok(vec![AppValue::Unsigned(values.len() as u64)]),
            Some(i) => values
                .get(i as usize - 1)
                .map(|v| vec![v.clone()])
                .ok_or((error_class::PROPERTY, error_code::INVALID_ARRAY_INDEX)),
        }
    }

    fn answer(&self, queries: &[RawQuery]) -> Vec<AckObject> {
        queries
            .iter()
            .map(|q| AckObject {
                object: q.object,
                properties: q
                    .properties
                    .iter()
                    .map(|&(property, array_index)| AckProperty {
                        property,
                        array_index,
                        outcome: self.read(q.object, property, array_index),
                    })
                    .collect(),
            })
            .collect()
    }
}

#[derive(Debug, Default)]
struct Counters {
    received: AtomicU64,
    answered: AtomicU64,
    rejected: AtomicU64,
    aborted: AtomicU64,
    dropped: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BacnetSimStats {
    pub received: u64,
    pub answered: u64,
    pub rejected: u64,
    pub aborted: u64,
    /// Datagrams too malformed to answer at all.
    pub dropped: u64,
}

pub struct BacnetSimHandle {
    addr: SocketAddr,
    state: Arc<Mutex<State>>,
    counters: Arc<Counters>,
    tasks: Vec<JoinHandle<()>>,
}

pub async fn run_bacnet_sim(cfg: BacnetSimConfig, bind: &str) -> Result<BacnetSimHandle, SimError> {
    cfg.validate()?;
    let mut objects = BTreeMap::new();
    for o in &cfg.objects {
        let salt = o.object.encode() as u64;
        objects.insert(o.object, Point { name: o.name.clone(), units: o.units, source: o.model.source(salt)? });
    }
    let state = Arc::new(Mutex::new(State {
        device: ObjectRef::device(cfg.device_instance).expect("validated"),
        device_name: cfg.device_name.clone(),
        objects,
    }));
    let bind_err = |e: std::io::Error| SimError::BindFailure { addr: bind.to_string(), reason: e.to_string() };
    let socket = UdpSocket::bind(bind).await.map_err(bind_err)?;
    let addr = socket.local_addr().map_err(bind_err)?;
    let counters = Arc::new(Counters::default());
    let mut tasks = vec![tokio::spawn(serve(socket, state.clone(), counters.clone(), cfg.max_response))];
    if cfg.tick_secs > 0.0 {
        let state = state.clone();
        let period = Duration::from_secs_f64(cfg.tick_secs);
        tasks.push(tokio::spawn(async move {
            let mut every = tokio::time::interval(period);
            every.tick().await;
            loop {
                every.tick().await;
                for p in state.lock().unwrap().objects.values_mut() {
                    p.source.next();
                }
            }
        }));
    }
    Ok(BacnetSimHandle { addr, state, counters, tasks })
}

async fn serve(socket: UdpSocket, state: Arc<Mutex<State>>, counters: Arc<Counters>, max_response: usize) {
    let mut buf = vec![0u8; 2048];
    loop {
        let Ok((n, from)) = socket.recv_from(&mut buf).await else { continue };
        counters.received.fetch_add(1, Ordering::Relaxed);
        let reply = match decode_rpm_request(&buf[..n]) {
            Ok(req) => {
                let ack = encode_rpm_ack(req.invoke_id, &state.lock().unwrap().answer(&req.queries));
                if ack.len() > max_response {
                    counters.aborted.fetch_add(1, Ordering::Relaxed);
                    encode_abort(req.invoke_id, abort_reason::SEGMENTATION_NOT_SUPPORTED)
                } else {
                    counters.answered.fetch_add(1, Ordering::Relaxed);
                    ack
                }
            }
            Err(e) => match e.invoke_id {
                Some(id) => {
                    counters.rejected.fetch_add(1, Ordering::Relaxed);
                    encode_reject(id, e.reason)
                }
                None => {
                    counters.dropped.fetch_add(1, Ordering::Relaxed);
                    continue;
                }
            },
        };
        let _ = socket.send_to(&reply, from).await;
    }
}

impl BacnetSimHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn stats(&self) -> BacnetSimStats {
        let c = &self.counters;
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        BacnetSimStats {
            received: g(&c.received),
            answered: g(&c.answered),
            rejected: g(&c.rejected),
            aborted: g(&c.aborted),
            dropped: g(&c.dropped),
        }
    }

    /// Current `(object, name, present value)` for every non-device object.
    pub fn snapshot(&self) -> Vec<(ObjectRef, String, AppValue)> {
        let s = self.state.lock().unwrap();
        s.objects.iter().map(|(o, p)| (*o, p.name.clone(), p.present_value(o.object_type))).collect()
    }

    pub fn set_present_value(&self, object: ObjectRef, value: f64) -> bool {
        match self.state.lock().unwrap().objects.get_mut(&object) {
            Some(p) => {
                p.source = ValueSource::Constant(value);
                true
            }
            None => false,
        }
    }

    pub fn remove_object(&self, object: ObjectRef) -> bool {
        self.state.lock().unwrap().objects.remove(&object).is_some()
    }

    /// Advances every value model one step.
    pub fn tick(&self) {
        for p in self.state.lock().unwrap().objects.values_mut() {
            p.source.next();
        }
    }

    pub fn stop(&self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

impl Drop for BacnetSimHandle {
    fn drop(&mut self) {
        self.stop();
    }
}
