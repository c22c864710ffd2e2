//! A small in-process MQTT 3.1.1 broker.
//!
//! Supports what the suites need: username/password checks, wildcard
//! subscriptions, QoS 0/1, a seeded lossy mode that drops a fraction of
//! messages before delivery, and stop/restart on the same port.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use bytes::BytesMut;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rumqttc::{matches, ConnAck, ConnectReturnCode, Packet, PubAck, Publish, QoS, SubAck, SubscribeReasonCode};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::AbortHandle;

const MAX_PACKET: usize = 1 << 20;

#[derive(Debug, Clone, Default)]
pub struct BrokerOptions {
    pub credentials: Option<(String, String)>,
    /// Fraction of routed messages silently dropped, in `[0, 1]`.
    pub drop_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Default)]
pub struct BrokerStats {
    pub connections: AtomicU64,
    pub rejected_logins: AtomicU64,
    pub published: AtomicU64,
    pub delivered: AtomicU64,
    pub dropped: AtomicU64,
}

struct Session {
    filters: Vec<(String, QoS)>,
    tx: mpsc::UnboundedSender<Packet>,
    next_pkid: u16,
}

struct Shared {
    options: BrokerOptions,
    sessions: Mutex<HashMap<u64, Session>>,
    rng: Mutex<ChaCha8Rng>,
    stats: BrokerStats,
    tasks: Mutex<Vec<AbortHandle>>,
    next_id: AtomicU64,
}

pub struct TestBroker {
    addr: SocketAddr,
    shared: Arc<Shared>,
}

impl TestBroker {
    pub async fn start(options: BrokerOptions) -> std::io::Result<Self> {
        Self::start_on("127.0.0.1:0".parse().unwrap(), options).await
    }

    pub async fn start_on(addr: SocketAddr, options: BrokerOptions) -> std::io::Result<Self> {
        let shared = Arc::new(Shared {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(options.seed)),
            options,
            sessions: Mutex::new(HashMap::new()),
            stats: BrokerStats::default(),
            tasks: Mutex::new(Vec::new()),
            next_id: AtomicU64::new(1),
        });
        let addr = listen(addr, shared.clone()).await?;
        Ok(TestBroker { addr, shared })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn stats(&self) -> &BrokerStats {
        &self.shared.stats
    }

    pub fn subscriber_count(&self) -> usize {
        self.shared
            .sessions
            .lock()
            .unwrap()
            .values()
            .filter(|s| !s.filters.is_empty())
            .count()
    }

    /// Closes the listener and every client connection.
    pub fn stop(&self) {
        for t in self.shared.tasks.lock().unwrap().drain(..) {
            t.abort();
        }
        self.shared.sessions.lock().unwrap().clear();
    }

    /// Listens again on the same port. Subscriptions do not survive.
    pub async fn restart(&self) -> std::io::Result<()> {
        self.stop();
        let mut last = None;
        for _ in 0..50 {
            match listen(self.addr, self.shared.clone()).await {
                Ok(_) => return Ok(()),
                Err(e) => last = Some(e),
            }
            tokio::time::sleep(std::time::Duration::from_millis(20)).await;
        }
        Err(last.unwrap())
    }
}

impl Drop for TestBroker {
    fn drop(&mut self) {
        self.stop();
    }
}

async fn listen(addr: SocketAddr, shared: Arc<Shared>) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let s = shared.clone();
    let accept = tokio::spawn(async move {
        loop {
            let Ok((stream, _)) = listener.accept().await else { continue };
            let _ = stream.set_nodelay(true);
            let conn = tokio::spawn(serve(stream, s.clone()));
            s.tasks.lock().unwrap().push(conn.abort_handle());
        }
    });
    shared.tasks.lock().unwrap().push(accept.abort_handle());
    Ok(local)
}

async fn read_packet(stream: &mut TcpStream, buf: &mut BytesMut) -> Option<Packet> {
    loop {
        match Packet::read(buf, MAX_PACKET) {
            Ok(p) => return Some(p),
            Err(rumqttc::Error::InsufficientBytes(_)) => {}
            Err(_) => return None,
        }
        match stream.read_buf(buf).await {
            Ok(0) | Err(_) => return None,
            Ok(_) => {}
        }
    }
}

async fn write_packet(stream: &mut (impl AsyncWriteExt + Unpin), p: &Packet) -> bool {
    let mut out = BytesMut::new();
    if p.write(&mut out, MAX_PACKET).is_err() {
        return false;
    }
    stream.write_all(&out).await.is_ok()
}

fn min_qos(a: QoS, b: QoS) -> QoS {
    if a == QoS::AtMostOnce || b == QoS::AtMostOnce {
        QoS::AtMostOnce
    } else {
        QoS::AtLeastOnce
    }
}

fn route(shared: &Shared, publish: &Publish) {
    shared.stats.published.fetch_add(1, Ordering::Relaxed);
    let mut sessions = shared.sessions.lock().unwrap();
    for session in sessions.values_mut() {
        let Some(sub_qos) = session
            .filters
            .iter()
            .filter(|(f, _)| matches(&publish.topic, f))
            .map(|(_, q)| *q)
            .max_by_key(|q| *q as u8)
        else {
            continue;
        };
        if shared.options.drop_fraction > 0.0
            && shared.rng.lock().unwrap().gen::<f64>() < shared.options.drop_fraction
        {
            shared.stats.dropped.fetch_add(1, Ordering::Relaxed);
            continue;
        }
        let mut out = Publish::from_bytes(publish.topic.clone(), min_qos(publish.qos, sub_qos), publish.payload.clone());
        if out.qos != QoS::AtMostOnce {
            session.next_pkid = session.next_pkid.checked_add(1).unwrap_or(1);
            out.pkid = session.next_pkid;
        }
        if session.tx.send(Packet::Publish(out)).is_ok() {
            shared.stats.delivered.fetch_add(1, Ordering::Relaxed);
        }
    }
}

async fn serve(mut stream: TcpStream, shared: Arc<Shared>) {
    let mut buf = BytesMut::with_capacity(4096);
    let Some(Packet::Connect(connect)) = read_packet(&mut stream, &mut buf).await else {
        return;
    };
    shared.stats.connections.fetch_add(1, Ordering::Relaxed);
    if let Some((user, pass)) = &shared.options.credentials {
        let ok = connect.login.as_ref().is_some_and(|l| l.validate(user, pass));
        if !ok {
            shared.stats.rejected_logins.fetch_add(1, Ordering::Relaxed);
            let nack = Packet::ConnAck(ConnAck::new(ConnectReturnCode::BadUserNamePassword, false));
            write_packet(&mut stream, &nack).await;
            return;
        }
    }
    if !write_packet(&mut stream, &Packet::ConnAck(ConnAck::new(ConnectReturnCode::Success, false))).await {
        return;
    }

    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let (tx, mut rx) = mpsc::unbounded_channel();
    shared.sessions.lock().unwrap().insert(
        id,
        Session {
            filters: Vec::new(),
            tx: tx.clone(),
            next_pkid: 0,
        },
    );
    let (mut reader, mut writer) = stream.into_split();
    let writer_task = tokio::spawn(async move {
        while let Some(p) = rx.recv().await {
            if !write_packet(&mut writer, &p).await {
                break;
            }
        }
    });

    loop {
        let packet = loop {
            match Packet::read(&mut buf, MAX_PACKET) {
                Ok(p) => break Some(p),
                Err(rumqttc::Error::InsufficientBytes(_)) => {}
                Err(_) => break None,
            }
            match reader.read_buf(&mut buf).await {
                Ok(0) | Err(_) => break None,
                Ok(_) => {}
            }
        };
        let Some(packet) = packet else { break };
        match packet {
            Packet::Subscribe(sub) => {
                let codes = sub
                    .filters
                    .iter()
                    .map(|f| SubscribeReasonCode::Success(min_qos(f.qos, QoS::AtLeastOnce)))
                    .collect();
                if let Some(s) = shared.sessions.lock().unwrap().get_mut(&id) {
                    for f in &sub.filters {
                        s.filters.retain(|(p, _)| p != &f.path);
                        s.filters.push((f.path.clone(), min_qos(f.qos, QoS::AtLeastOnce)));
                    }
                }
                let _ = tx.send(Packet::SubAck(SubAck::new(sub.pkid, codes)));
            }
            Packet::Publish(p) => {
                if p.qos != QoS::AtMostOnce {
                    let _ = tx.send(Packet::PubAck(PubAck::new(p.pkid)));
                }
                route(&shared, &p);
            }
            Packet::PingReq => {
                let _ = tx.send(Packet::PingResp);
            }
            Packet::Disconnect => break,
            _ => {}
        }
    }
    shared.sessions.lock().unwrap().remove(&id);
    drop(tx);
    let _ = writer_task.await;
}
