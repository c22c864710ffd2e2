use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::net::UdpSocket;
use tokio::sync::{Mutex, RwLock};
use tokio::time::Instant;
use tracing::{debug, warn};

use crate::rpm::{decode_rpm_ack, encode_rpm, response_invoke_id, ReadEntry, ReadResult};
use crate::types::{abort_reason, error_code, ObjectRef, PropertyId, PropertyQuery, PropertyRef, MAX_INSTANCE};
use crate::BacnetError;

pub const DEFAULT_PORT: u16 = 47808;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacnetEndpoint {
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    pub device_instance: u32,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_port() -> u16 {
    DEFAULT_PORT
}

fn default_timeout() -> u64 {
    2000
}

fn default_retries() -> u32 {
    2
}

impl BacnetEndpoint {
    pub fn new(host: impl Into<String>, device_instance: u32) -> Self {
        BacnetEndpoint {
            host: host.into(),
            port: DEFAULT_PORT,
            device_instance,
            timeout_ms: default_timeout(),
            retries: default_retries(),
        }
    }

    pub fn with_port(mut self, port: u16) -> Self {
        self.port = port;
        self
    }

    pub fn with_timeout(mut self, timeout_ms: u64, retries: u32) -> Self {
        self.timeout_ms = timeout_ms;
        self.retries = retries;
        self
    }

    pub fn validate(&self) -> Result<(), BacnetError> {
        if self.host.is_empty() {
            return Err(BacnetError::InvalidEndpoint("host is empty".into()));
        }
        if self.device_instance > MAX_INSTANCE {
            return Err(BacnetError::InvalidEndpoint(format!(
                "device instance {} exceeds {MAX_INSTANCE}",
                self.device_instance
            )));
        }
        if self.timeout_ms == 0 {
            return Err(BacnetError::InvalidEndpoint("timeout_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn target(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }

    pub fn device(&self) -> ObjectRef {
        ObjectRef::device(self.device_instance & MAX_INSTANCE).expect("masked instance")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscoveredObject {
    pub object: ObjectRef,
    pub name: Option<String>,
    pub units: Option<u32>,
    /// Set when the name or units could not be read.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discovery {
    pub device: ObjectRef,
    pub objects: Vec<DiscoveredObject>,
    /// True when some object-list elements or object properties failed.
    pub partial: bool,
}

type NameCache = HashMap<String, ObjectRef>;

/// Client for one BACnet/IP controller. Requests are serialized so at most
/// one is in flight at a time.
pub struct BacnetClient {
    endpoint: BacnetEndpoint,
    peer: SocketAddr,
    socket: UdpSocket,
    invoke: AtomicU8,
    inflight: Mutex<()>,
    cache: RwLock<Option<Arc<NameCache>>>,
    requests: AtomicU64,
}

fn splittable(err: &BacnetError) -> bool {
    matches!(
        err,
        BacnetError::TooLarge { .. }
            | BacnetError::Abort(abort_reason::SEGMENTATION_NOT_SUPPORTED)
            | BacnetError::Abort(abort_reason::BUFFER_OVERFLOW)
    )
}

/// Halves a batch at the query level, or at the property level for a single
/// query. `None` when it cannot be split further.
fn split(mut batch: Vec<PropertyQuery>) -> Option<(Vec<PropertyQuery>, Vec<PropertyQuery>)> {
    if batch.len() > 1 {
        let tail = batch.split_off(batch.len() / 2);
        return Some((batch, tail));
    }
    let q = batch.pop()?;
    if q.properties.len() < 2 {
        return None;
    }
    let mut head = q.properties;
    let tail = head.split_off(head.len() / 2);
    Some((
        vec![PropertyQuery {
            object: q.object,
            properties: head,
        }],
        vec![PropertyQuery {
            object: q.object,
            properties: tail,
        }],
    ))
}

fn pairs(batch: &[PropertyQuery]) -> usize {
    batch.iter().map(|q| q.properties.len()).sum()
}

impl BacnetClient {
    pub async fn connect(endpoint: BacnetEndpoint) -> Result<Self, BacnetError> {
        endpoint.validate()?;
        let peer = tokio::net::lookup_host(endpoint.target())
            .await?
            .next()
            .ok_or_else(|| BacnetError::InvalidEndpoint(format!("cannot resolve {}", endpoint.host)))?;
        let local: SocketAddr = if peer.is_ipv4() {
            "0.0.0.0:0".parse().unwrap()
        } else {
            "[::]:0".parse().unwrap()
        };
        let socket = UdpSocket::bind(local).await?;
        socket.connect(peer).await?;
        Ok(BacnetClient {
            endpoint,
            peer,
            socket,
            invoke: AtomicU8::new(rand_start()),
            inflight: Mutex::new(()),
            cache: RwLock::new(None),
            requests: AtomicU64::new(0),
        })
    }

    pub fn endpoint(&self) -> &BacnetEndpoint {
        &self.endpoint
    }

    /// Datagrams sent, retransmissions included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    async fn exchange(&self, batch: &[PropertyQuery]) -> Result<ReadResult, BacnetError> {
        let _guard = self.inflight.lock().await;
        let invoke = self.invoke.fetch_add(1, Ordering::Relaxed);
        let request = encode_rpm(invoke, batch)?;
        let timeout = Duration::from_millis(self.endpoint.timeout_ms);
        let attempts = self.endpoint.retries + 1;
        let mut buf = vec![0u8; 2048];
        for attempt in 1..=attempts {
            self.requests.fetch_add(1, Ordering::Relaxed);
            if let Err(e) = self.socket.send(&request).await {
                // ICMP unreachable from an earlier datagram can surface here
                debug!(attempt, error = %e, "send failed");
            }
            let deadline = Instant::now() + timeout;
            loop {
                let n = match tokio::time::timeout_at(deadline, self.socket.recv(&mut buf)).await {
                    Err(_) => break,
                    Ok(Ok(n)) => n,
                    Ok(Err(e)) => {
                        debug!(attempt, error = %e, "receive failed");
                        tokio::time::sleep_until(deadline).await;
                        break;
                    }
                };
                let datagram = &buf[..n];
                if response_invoke_id(datagram) != Some(invoke) {
                    debug!(invoke, "ignoring unrelated datagram");
                    continue;
                }
                let result = decode_rpm_ack(datagram, invoke)?;
                if result.len() != pairs(batch) {
                    return Err(BacnetError::MalformedTag(format!(
                        "{} results for {} requested properties",
                        result.len(),
                        pairs(batch)
                    )));
                }
                return Ok(result);
            }
            debug!(attempt, target = %self.peer, "request timed out");
        }
        Err(BacnetError::Timeout {
            target: self.endpoint.target(),
            attempts,
        })
    }

    /// Reads every requested property. Batches that do not fit one datagram
    /// in either direction are split and the partial results concatenated in
    /// request order.
    pub async fn read_property_multiple(
        &self,
        queries: &[PropertyQuery],
    ) -> Result<ReadResult, BacnetError> {
        if queries.is_empty() || queries.iter().any(|q| q.properties.is_empty()) {
            return Err(BacnetError::EmptyQuery);
        }
        let mut pending = VecDeque::from([queries.to_vec()]);
        let mut entries = Vec::with_capacity(pairs(queries));
        while let Some(batch) = pending.pop_front() {
            match self.exchange(&batch).await {
                Ok(res) => entries.extend(res.entries),
                Err(e) if splittable(&e) => {
                    let (head, tail) = split(batch).ok_or(e)?;
                    debug!(head = pairs(&head), tail = pairs(&tail), "splitting request");
                    pending.push_front(tail);
                    pending.push_front(head);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(ReadResult { entries })
    }

    async fn read_object_list(&self, device: ObjectRef) -> Result<(Vec<ObjectRef>, bool), BacnetError> {
        let whole = PropertyQuery::new(device, [PropertyId::ObjectList]);
        let missing = |entry: &ReadEntry| {
            BacnetError::DiscoveryFailed(format!(
                "cannot read object-list of {device}: {}",
                entry.outcome.as_ref().err().map(|e| e.name()).unwrap_or_default()
            ))
        };
        match self.exchange(std::slice::from_ref(&whole)).await {
            Ok(res) => {
                let entry = &res.entries[0];
                let list = entry.object_list().ok_or_else(|| missing(entry))?;
                return Ok((list, false));
            }
            Err(e) if splittable(&e) => debug!("object-list too large, reading by index"),
            Err(e) => return Err(e),
        }

        let count_query = PropertyQuery {
            object: device,
            properties: vec![PropertyRef {
                property: PropertyId::ObjectList,
                array_index: Some(0),
            }],
        };
        let res = self.exchange(std::slice::from_ref(&count_query)).await?;
        let entry = &res.entries[0];
        let count = match entry.value() {
            Ok(v) => v.as_real().unwrap_or(-1.0),
            Err(_) => return Err(missing(entry)),
        };
        if !(0.0..=f64::from(u16::MAX)).contains(&count) {
            return Err(BacnetError::DiscoveryFailed(format!("implausible object count {count}")));
        }
        let indexed = PropertyQuery {
            object: device,
            properties: (1..=count as u32)
                .map(|i| PropertyRef {
                    property: PropertyId::ObjectList,
                    array_index: Some(i),
                })
                .collect(),
        };
        if indexed.properties.is_empty() {
            return Ok((Vec::new(), false));
        }
        let res = self.read_property_multiple(&[indexed]).await?;
        let mut partial = false;
        let mut list = Vec::new();
        for e in &res.entries {
            match e.object_list() {
                Some(objs) => list.extend(objs),
                None => partial = true,
            }
        }
        Ok((list, partial))
    }

    /// Reads the device object-list, then the name and units of every
    /// object. The device object itself is not included in the result.
    pub async fn discover_objects(&self) -> Result<Discovery, BacnetError> {
        let device = self.endpoint.device();
        let (list, mut partial) = self.read_object_list(device).await?;
        let mut objects: Vec<ObjectRef> = list.into_iter().filter(|o| *o != device).collect();
        objects.sort();
        objects.dedup();
        if objects.is_empty() {
            return Ok(Discovery {
                device,
                objects: Vec::new(),
                partial,
            });
        }
        let queries: Vec<PropertyQuery> = objects
            .iter()
            .map(|o| {
                if o.object_type.is_analog() {
                    PropertyQuery::new(*o, [PropertyId::ObjectName, PropertyId::Units])
                } else {
                    PropertyQuery::new(*o, [PropertyId::ObjectName])
                }
            })
            .collect();
        let res = self.read_property_multiple(&queries).await?;
        let mut found: Vec<DiscoveredObject> = objects
            .iter()
            .map(|o| DiscoveredObject {
                object: *o,
                name: None,
                units: None,
                error: None,
            })
            .collect();
        for entry in &res.entries {
            let Ok(i) = objects.binary_search(&entry.object) else {
                continue;
            };
            let slot = &mut found[i];
            match (&entry.outcome, entry.property) {
                (Err(e), _) => {
                    partial = true;
                    slot.error.get_or_insert_with(|| e.name());
                }
                (Ok(_), PropertyId::ObjectName) => {
                    slot.name = entry.value().ok().and_then(|v| v.as_text().map(str::to_string));
                }
                (Ok(_), PropertyId::Units) => slot.units = entry.units(),
                _ => {}
            }
        }
        Ok(Discovery {
            device,
            objects: found,
            partial,
        })
    }

    /// Rebuilds the name cache from a fresh discovery.
    pub async fn refresh_names(&self) -> Result<Discovery, BacnetError> {
        let mut guard = self.cache.write().await;
        let discovery = self.discover_objects().await?;
        let mut names = NameCache::new();
        for o in &discovery.objects {
            if let Some(name) = &o.name {
                names.entry(name.clone()).or_insert(o.object);
            }
        }
        *guard = Some(Arc::new(names));
        Ok(discovery)
    }

    /// Installs a name mapping without asking the device.
    pub async fn set_names(&self, names: impl IntoIterator<Item = (String, ObjectRef)>) {
        *self.cache.write().await = Some(Arc::new(names.into_iter().collect()));
    }

    async fn names(&self) -> Result<Arc<NameCache>, BacnetError> {
        if let Some(c) = self.cache.read().await.as_ref() {
            return Ok(c.clone());
        }
        self.refresh_names().await?;
        Ok(self.cache.read().await.clone().unwrap_or_default())
    }

    /// Resolves object names through the discovery cache and reads their
    /// present values.
    pub async fn read_by_name(&self, names: &[String]) -> Result<ReadResult, BacnetError> {
        if names.is_empty() {
            return Err(BacnetError::EmptyQuery);
        }
        let cache = self.names().await?;
        let mut unknown = Vec::new();
        let mut queries = Vec::new();
        for n in names {
            match cache.get(n) {
                Some(o) => queries.push(PropertyQuery::present_value(*o)),
                None => unknown.push(n.clone()),
            }
        }
        if !unknown.is_empty() {
            return Err(BacnetError::UnknownName(unknown));
        }
        let res = self.read_property_multiple(&queries).await?;
        for e in &res.entries {
            if let Err(crate::rpm::EntryError::Device {
                code: error_code::UNKNOWN_OBJECT,
                ..
            }) = e.outcome
            {
                warn!(object = %e.object, "cached object no longer exists");
            }
        }
        Ok(res)
    }
}

fn rand_start() -> u8 {
    // spread invoke ids of concurrently created clients
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    (nanos >> 8) as u8
}
