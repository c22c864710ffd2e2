use std::io;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::time::{timeout, timeout_at, Instant};
use tracing::{debug, trace};

use crate::frame::{self, MbapHeader, RegisterKind, MBAP_LEN};
use crate::ModbusError;

pub const DEFAULT_PORT: u16 = 502;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionMode {
    /// Keep one TCP connection open across requests.
    Persistent,
    /// Open a connection per request and close it after the response, so
    /// other clients can reach single-connection devices in between.
    #[default]
    PerRequestClose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConnectionPolicy {
    pub mode: ConnectionMode,
    pub connect_timeout_ms: u64,
    pub io_timeout_ms: u64,
    pub port: u16,
    /// Extra attempts on a fresh connection after a connection-level failure.
    pub retries: u32,
}

impl Default for ConnectionPolicy {
    fn default() -> Self {
        ConnectionPolicy {
            mode: ConnectionMode::PerRequestClose,
            connect_timeout_ms: 3000,
            io_timeout_ms: 3000,
            port: DEFAULT_PORT,
            retries: 1,
        }
    }
}

impl ConnectionPolicy {
    pub fn persistent() -> Self {
        ConnectionPolicy {
            mode: ConnectionMode::Persistent,
            ..Default::default()
        }
    }

    pub fn with_port(mut self, port: u16) -> Self {
        self.port = port;
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_timeouts(mut self, connect_ms: u64, io_ms: u64) -> Self {
        self.connect_timeout_ms = connect_ms;
        self.io_timeout_ms = io_ms;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.connect_timeout_ms == 0 || self.io_timeout_ms == 0 {
            return Err("connection timeouts must be greater than zero".into());
        }
        Ok(())
    }
}

/// Request counters of one client, mostly for tests and health reporting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub requests: u64,
    pub connects: u64,
    pub retries: u64,
    pub failures: u64,
}

/// Modbus/TCP client for one device.
///
/// A client is owned by a single task. Transaction ids increase by one per
/// request and responses are matched on the id, so a late answer to an
/// earlier request is skipped rather than mistaken for the current one.
#[derive(Debug)]
pub struct ModbusClient {
    host: String,
    unit_id: u8,
    policy: ConnectionPolicy,
    stream: Option<TcpStream>,
    next_tx: u16,
    stats: ClientStats,
}

impl ModbusClient {
    pub fn new(host: impl Into<String>, unit_id: u8, policy: ConnectionPolicy) -> Self {
        ModbusClient {
            host: host.into(),
            unit_id,
            policy,
            stream: None,
            next_tx: 1,
            stats: ClientStats::default(),
        }
    }

    pub fn policy(&self) -> &ConnectionPolicy {
        &self.policy
    }

    pub fn stats(&self) -> ClientStats {
        self.stats
    }

    pub fn is_connected(&self) -> bool {
        self.stream.is_some()
    }

    pub fn target(&self) -> String {
        format!("{}:{}", self.host, self.policy.port)
    }

    pub async fn read_registers(
        &mut self,
        kind: RegisterKind,
        addr: u16,
        count: u16,
    ) -> Result<Vec<u16>, ModbusError> {
        let unit = self.unit_id;
        let (tx, response) = self
            .exchange(|tx| frame::encode_read(tx, unit, kind, addr, count))
            .await?;
        frame::decode_read_response(&response, tx, kind, count)
    }

    pub async fn write_registers(&mut self, addr: u16, values: &[u16]) -> Result<(), ModbusError> {
        let unit = self.unit_id;
        let (tx, response) = self
            .exchange(|tx| frame::encode_write_multiple(tx, unit, addr, values))
            .await?;
        frame::decode_write_response(&response, tx, addr, values.len() as u16)
    }

    /// Closes the connection if one is open.
    pub async fn close(&mut self) {
        if let Some(mut stream) = self.stream.take() {
            let _ = stream.shutdown().await;
        }
    }

    fn take_tx(&mut self) -> u16 {
        let tx = self.next_tx;
        self.next_tx = self.next_tx.wrapping_add(1);
        tx
    }

    async fn exchange(
        &mut self,
        build: impl Fn(u16) -> Result<Vec<u8>, ModbusError>,
    ) -> Result<(u16, Vec<u8>), ModbusError> {
        let mut attempt = 0;
        loop {
            let tx = self.take_tx();
            let request = build(tx)?;
            self.stats.requests += 1;
            let result = self.exchange_once(tx, &request).await;
            match result {
                Ok(response) => {
                    if self.policy.mode == ConnectionMode::PerRequestClose {
                        self.close().await;
                    }
                    return Ok((tx, response));
                }
                Err(err) if err.is_connection_error() => {
                    self.stream = None;
                    if attempt < self.policy.retries {
                        attempt += 1;
                        self.stats.retries += 1;
                        debug!(target = %self.target(), %err, attempt, "retrying on a fresh connection");
                        continue;
                    }
                    self.stats.failures += 1;
                    return Err(err);
                }
                Err(err) => {
                    if self.policy.mode == ConnectionMode::PerRequestClose {
                        self.close().await;
                    }
                    self.stats.failures += 1;
                    return Err(err);
                }
            }
        }
    }

    async fn connect(&mut self) -> Result<&mut TcpStream, ModbusError> {
        if self.stream.is_none() {
            let target = self.target();
            let limit = Duration::from_millis(self.policy.connect_timeout_ms);
            let stream = match timeout(limit, TcpStream::connect((self.host.as_str(), self.policy.port))).await {
                Err(_) => return Err(ModbusError::ConnectTimeout { target }),
                Ok(Err(e)) => {
                    return Err(ModbusError::ConnectFailed {
                        target,
                        reason: e.to_string(),
                    })
                }
                Ok(Ok(s)) => s,
            };
            let _ = stream.set_nodelay(true);
            self.stats.connects += 1;
            self.stream = Some(stream);
        }
        Ok(self.stream.as_mut().expect("stream set above"))
    }

    async fn exchange_once(&mut self, tx: u16, request: &[u8]) -> Result<Vec<u8>, ModbusError> {
        let io_limit = Duration::from_millis(self.policy.io_timeout_ms);
        let stream = self.connect().await?;
        let deadline = Instant::now() + io_limit;
        match timeout_at(deadline, stream.write_all(request)).await {
            Err(_) => return Err(ModbusError::IoTimeout),
            Ok(Err(e)) => return Err(io_error(e)),
            Ok(Ok(())) => {}
        }
        loop {
            let frame = match timeout_at(deadline, read_frame(stream)).await {
                Err(_) => return Err(ModbusError::IoTimeout),
                Ok(result) => result?,
            };
            let got = u16::from_be_bytes([frame[0], frame[1]]);
            if got == tx {
                return Ok(frame);
            }
            trace!(expected = tx, got, "skipping response to an earlier transaction");
        }
    }
}

fn io_error(e: io::Error) -> ModbusError {
    match e.kind() {
        io::ErrorKind::UnexpectedEof => ModbusError::Disconnected("closed by peer".into()),
        io::ErrorKind::ConnectionReset => ModbusError::Disconnected("reset by peer".into()),
        io::ErrorKind::BrokenPipe => ModbusError::Disconnected("broken pipe".into()),
        _ => ModbusError::Disconnected(e.to_string()),
    }
}

async fn read_frame(stream: &mut TcpStream) -> Result<Vec<u8>, ModbusError> {
    let mut header = [0u8; MBAP_LEN];
    stream.read_exact(&mut header).await.map_err(io_error)?;
    let mbap = MbapHeader::decode(&header)?;
    if mbap.length < 2 || mbap.length > 254 {
        return Err(ModbusError::LengthMismatch {
            expected: 254,
            got: mbap.length as usize,
        });
    }
    let mut frame = vec![0u8; mbap.frame_len()];
    frame[..MBAP_LEN].copy_from_slice(&header);
    stream
        .read_exact(&mut frame[MBAP_LEN..])
        .await
        .map_err(io_error)?;
    Ok(frame)
}
