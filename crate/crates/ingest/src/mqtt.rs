use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use gateway_core::{Inlet, Timestamp};
use rumqttc::{
    AsyncClient, ConnectReturnCode, ConnectionError, Event, MqttOptions, Packet, QoS, SubscribeFilter,
};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use tracing::{debug, info, warn};

use crate::binding::{parse_payload, TopicBinding};
use crate::IngestError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backoff {
    pub initial_ms: u64,
    pub max_ms: u64,
    pub multiplier: f64,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            initial_ms: 500,
            max_ms: 30_000,
            multiplier: 2.0,
        }
    }
}

impl Backoff {
    pub fn next(&self, current_ms: u64) -> u64 {
        ((current_ms as f64 * self.multiplier) as u64).clamp(self.initial_ms, self.max_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerConfig {
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    pub client_id: String,
    #[serde(default)]
    pub username: Option<String>,
    #[serde(default)]
    pub password: Option<String>,
    #[serde(default = "default_keep_alive")]
    pub keep_alive_secs: u64,
    #[serde(default)]
    pub backoff: Backoff,
}

fn default_port() -> u16 {
    1883
}

fn default_keep_alive() -> u64 {
    30
}

impl BrokerConfig {
    pub fn new(host: impl Into<String>, port: u16, client_id: impl Into<String>) -> Self {
        BrokerConfig {
            host: host.into(),
            port,
            client_id: client_id.into(),
            username: None,
            password: None,
            keep_alive_secs: default_keep_alive(),
            backoff: Backoff::default(),
        }
    }

    pub fn with_credentials(mut self, user: impl Into<String>, password: impl Into<String>) -> Self {
        self.username = Some(user.into());
        self.password = Some(password.into());
        self
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::InvalidBinding(format!("broker: {m}")));
        if self.host.is_empty() {
            return bad("host must not be empty");
        }
        if self.client_id.is_empty() {
            return bad("client_id must not be empty");
        }
        if self.backoff.initial_ms == 0 || self.backoff.initial_ms > self.backoff.max_ms {
            return bad("backoff initial_ms must be positive and not above max_ms");
        }
        if !(self.backoff.multiplier >= 1.0) {
            return bad("backoff multiplier must be at least 1");
        }
        if self.keep_alive_secs < 5 {
            return bad("keep_alive_secs must be at least 5");
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct IngestStats {
    pub messages: AtomicU64,
    pub points: AtomicU64,
    pub parse_errors: AtomicU64,
    pub rejected_fields: AtomicU64,
    pub ignored_fields: AtomicU64,
    pub connects: AtomicU64,
    pub disconnects: AtomicU64,
}

impl IngestStats {
    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::Relaxed)
    }
}

/// Resolves once shutdown is requested or the sender is gone.
pub async fn stopped(rx: &mut watch::Receiver<bool>) {
    let _ = rx.wait_for(|stop| *stop).await;
}

/// One MQTT connection feeding every configured binding.
pub struct Subscriber {
    broker: BrokerConfig,
    bindings: Vec<TopicBinding>,
    stats: Arc<IngestStats>,
}

impl Subscriber {
    pub fn new(broker: BrokerConfig, bindings: Vec<TopicBinding>) -> Result<Self, IngestError> {
        broker.validate()?;
        if bindings.is_empty() {
            return Err(IngestError::InvalidBinding("no topic bindings".into()));
        }
        for b in &bindings {
            b.validate()?;
        }
        Ok(Subscriber {
            broker,
            bindings,
            stats: Arc::new(IngestStats::default()),
        })
    }

    pub fn stats(&self) -> Arc<IngestStats> {
        self.stats.clone()
    }

    fn options(&self) -> MqttOptions {
        let mut o = MqttOptions::new(&self.broker.client_id, &self.broker.host, self.broker.port);
        o.set_keep_alive(Duration::from_secs(self.broker.keep_alive_secs));
        o.set_clean_session(true);
        o.set_max_packet_size(1 << 20, 1 << 20);
        if let Some(user) = &self.broker.username {
            o.set_credentials(user, self.broker.password.clone().unwrap_or_default());
        }
        o
    }

    fn filters(&self) -> Vec<SubscribeFilter> {
        let mut seen = Vec::new();
        for b in &self.bindings {
            if !seen.contains(&b.filter) {
                seen.push(b.filter.clone());
            }
        }
        seen.into_iter()
            .map(|f| SubscribeFilter::new(f, QoS::AtLeastOnce))
            .collect()
    }

    fn handle(&self, topic: &str, payload: &[u8], inlet: &dyn Inlet) {
        self.stats.messages.fetch_add(1, Ordering::Relaxed);
        let now = Timestamp::now();
        for b in self.bindings.iter().filter(|b| b.matches(topic)) {
            match parse_payload(topic, payload, b, now) {
                Ok(parsed) => {
                    self.stats
                        .ignored_fields
                        .fetch_add(parsed.ignored as u64, Ordering::Relaxed);
                    if !parsed.rejected.is_empty() {
                        self.stats
                            .rejected_fields
                            .fetch_add(parsed.rejected.len() as u64, Ordering::Relaxed);
                        debug!(topic, rejected = ?parsed.rejected, "fields rejected");
                    }
                    self.stats
                        .points
                        .fetch_add(parsed.points.len() as u64, Ordering::Relaxed);
                    for dp in parsed.points {
                        inlet.submit(dp);
                    }
                }
                Err(e) => {
                    self.stats.parse_errors.fetch_add(1, Ordering::Relaxed);
                    debug!(topic, error = %e, "payload dropped");
                }
            }
        }
    }

    /// Runs until `shutdown` turns true. Reconnects with exponential backoff
    /// and resubscribes after every connect. Rejected credentials end the
    /// loop with [`IngestError::AuthFailure`].
    pub async fn run(&self, inlet: Arc<dyn Inlet>, mut shutdown: watch::Receiver<bool>) -> Result<(), IngestError> {
        let (client, mut eventloop) = AsyncClient::new(self.options(), 64);
        let filters = self.filters();
        let mut delay = self.broker.backoff.initial_ms;
        loop {
            let event = tokio::select! {
                e = eventloop.poll() => e,
                _ = stopped(&mut shutdown) => {
                    let _ = client.try_disconnect();
                    return Ok(());
                }
            };
            match event {
                Ok(Event::Incoming(Packet::ConnAck(_))) => {
                    self.stats.connects.fetch_add(1, Ordering::Relaxed);
                    delay = self.broker.backoff.initial_ms;
                    info!(broker = %self.broker.host, port = self.broker.port, "connected");
                    if let Err(e) = client.try_subscribe_many(filters.clone()) {
                        warn!(error = %e, "subscribe request not queued");
                    }
                }
                Ok(Event::Incoming(Packet::Publish(p))) => self.handle(&p.topic, &p.payload, inlet.as_ref()),
                Ok(Event::Incoming(Packet::SubAck(ack))) => debug!(codes = ?ack.return_codes, "subscribed"),
                Ok(_) => {}
                Err(ConnectionError::ConnectionRefused(
                    code @ (ConnectReturnCode::BadUserNamePassword | ConnectReturnCode::NotAuthorized),
                )) => {
                    return Err(IngestError::AuthFailure(format!("{code:?}")));
                }
                Err(e) => {
                    self.stats.disconnects.fetch_add(1, Ordering::Relaxed);
                    warn!(error = %e, retry_ms = delay, "broker connection lost");
                    tokio::select! {
                        _ = tokio::time::sleep(Duration::from_millis(delay)) => {}
                        _ = stopped(&mut shutdown) => return Ok(()),
                    }
                    delay = self.broker.backoff.next(delay);
                }
            }
        }
    }
}
