//! Modbus/TCP server with injectable connection and handshake faults.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use gateway_modbus::frame::{
    MbapHeader, RegisterKind, FC_READ_HOLDING, FC_READ_INPUT, FC_WRITE_MULTIPLE, MAX_READ_COUNT, MAX_WRITE_COUNT,
};
use gateway_modbus::{decode_registers, DataType, ExceptionCode, ModbusBinding, RegisterCodec, RegisterMap, WordOrder};
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

use crate::value::{ValueModel, ValueSource};
use crate::SimError;

/// How long a newcomer waits for the open connection to go away under
/// [`FaultModel::SingleConnectionLimit`].
const SINGLE_CONNECTION_GRACE: Duration = Duration::from_millis(200);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultModel {
    None,
    /// Serves one TCP connection at a time.
    SingleConnectionLimit,
    /// Resets every second accepted connection before answering.
    RejectAlternateConnections,
    /// Historical-data handshake: after a date write, the status register
    /// reads not-ready for `polls` reads, then ready.
    DelayedReady {
        polls: u32,
        #[serde(default = "date_addr")]
        date_addr: u16,
        #[serde(default = "ready_addr")]
        ready_addr: u16,
    },
    /// Any request touching `address` gets exception `code`.
    ExceptionOn { address: u16, code: u8 },
}

fn date_addr() -> u16 {
    0x1000
}
fn ready_addr() -> u16 {
    0x1003
}

impl FaultModel {
    pub fn delayed_ready(polls: u32) -> Self {
        FaultModel::DelayedReady { polls, date_addr: date_addr(), ready_addr: ready_addr() }
    }
}

/// Full holding and input register tables.
#[derive(Debug, Clone)]
pub struct Registers {
    holding: Vec<u16>,
    input: Vec<u16>,
}

impl Default for Registers {
    fn default() -> Self {
        Registers { holding: vec![0; 0x1_0000], input: vec![0; 0x1_0000] }
    }
}

impl Registers {
    fn table(&self, kind: RegisterKind) -> &[u16] {
        match kind {
            RegisterKind::Holding => &self.holding,
            RegisterKind::Input => &self.input,
        }
    }

    pub fn set(&mut self, kind: RegisterKind, addr: u16, words: &[u16]) {
        let t = match kind {
            RegisterKind::Holding => &mut self.holding,
            RegisterKind::Input => &mut self.input,
        };
        let start = addr as usize;
        let end = (start + words.len()).min(t.len());
        t[start..end].copy_from_slice(&words[..end - start]);
    }

    pub fn get(&self, kind: RegisterKind, addr: u16, count: u16) -> Vec<u16> {
        let start = addr as usize;
        let end = (start + count as usize).min(0x1_0000);
        self.table(kind)[start..end].to_vec()
    }

    /// Stores `value` under `binding` (address offset by `base`).
    pub fn put_value(&mut self, binding: &ModbusBinding, base: u16, value: f64) {
        let words = encode_value(&binding.codec, value);
        self.set(binding.function, base.wrapping_add(binding.address), &words);
    }

    /// Stores `pick(binding)` for every binding of `map` and returns the
    /// values a client will decode, in binding order.
    pub fn load_map(&mut self, map: &RegisterMap, base: u16, mut pick: impl FnMut(&ModbusBinding) -> f64) -> Vec<(String, f64)> {
        map.bindings
            .iter()
            .map(|b| {
                let words = encode_value(&b.codec, pick(b));
                self.set(b.function, base.wrapping_add(b.address), &words);
                let v = decode_registers(&b.codec, &words).ok().and_then(|v| v.as_real()).unwrap_or(f64::NAN);
                (b.parameter.clone(), v)
            })
            .collect()
    }
}

/// Inverse of the client's register decoding: `(value - offset) / scale`,
/// rounded and saturated to the register type.
pub fn encode_value(codec: &RegisterCodec, value: f64) -> Vec<u16> {
    let raw = (value - codec.offset) / codec.scale;
    let word32 = |v: u32| -> Vec<u16> {
        let (hi, lo) = ((v >> 16) as u16, v as u16);
        match codec.word_order {
            WordOrder::Big => vec![hi, lo],
            WordOrder::Little => vec![lo, hi],
        }
    };
    match codec.datatype {
        DataType::U16 => vec![raw.round().clamp(0.0, u16::MAX as f64) as u16],
        DataType::I16 => vec![raw.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16 as u16],
        DataType::U32 => word32(raw.round().clamp(0.0, u32::MAX as f64) as u32),
        DataType::I32 => word32(raw.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32 as u32),
        DataType::F32 => word32((raw as f32).to_bits()),
    }
}

#[derive(Debug, Default)]
struct Counters {
    accepted: AtomicU64,
    refused: AtomicU64,
    requests: AtomicU64,
    exceptions: AtomicU64,
    writes: AtomicU64,
    status_polls: AtomicU64,
    data_reads: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ModbusSimStats {
    pub accepted: u64,
    /// Connections closed or reset by a fault before any response.
    pub refused: u64,
    pub requests: u64,
    pub exceptions: u64,
    pub writes: u64,
    pub status_polls: u64,
    pub data_reads: u64,
}

struct Shared {
    registers: Mutex<Registers>,
    faults: Vec<FaultModel>,
    /// Status reads since the last date write; `None` before any write.
    handshake: Mutex<Option<u32>>,
    active: AtomicUsize,
    counters: Counters,
}

/// Builder for a simulated Modbus/TCP device.
pub struct ModbusSim {
    registers: Registers,
    faults: Vec<FaultModel>,
    animated: Vec<(ModbusBinding, u16, ValueSource)>,
    tick: Duration,
}

impl ModbusSim {
    pub fn new(registers: Registers) -> Self {
        ModbusSim { registers, faults: Vec::new(), animated: Vec::new(), tick: Duration::from_secs(1) }
    }

    pub fn fault(mut self, fault: FaultModel) -> Self {
        if fault != FaultModel::None {
            self.faults.push(fault);
        }
        self
    }

    /// Drives `binding` from `model`, writing a new sample every tick.
    pub fn animate(mut self, binding: ModbusBinding, base: u16, model: &ValueModel, salt: u64) -> Result<Self, SimError> {
        let source = model.source(salt)?;
        self.registers.put_value(&binding, base, source.current());
        self.animated.push((binding, base, source));
        Ok(self)
    }

    pub fn tick_every(mut self, tick: Duration) -> Self {
        self.tick = tick;
        self
    }

    pub async fn start(self, bind: &str) -> Result<ModbusSimHandle, SimError> {
        let listener = TcpListener::bind(bind)
            .await
            .map_err(|e| SimError::BindFailure { addr: bind.to_string(), reason: e.to_string() })?;
        let addr = listener.local_addr().map_err(|e| SimError::BindFailure { addr: bind.into(), reason: e.to_string() })?;
        let shared = Arc::new(Shared {
            registers: Mutex::new(self.registers),
            faults: self.faults,
            handshake: Mutex::new(None),
            active: AtomicUsize::new(0),
            counters: Counters::default(),
        });
        let mut tasks = vec![tokio::spawn(accept_loop(listener, shared.clone()))];
        if !self.animated.is_empty() {
            tasks.push(tokio::spawn(animate(shared.clone(), self.animated, self.tick)));
        }
        Ok(ModbusSimHandle { addr, shared, tasks })
    }
}

async fn animate(shared: Arc<Shared>, mut animated: Vec<(ModbusBinding, u16, ValueSource)>, tick: Duration) {
    let mut every = tokio::time::interval(tick);
    every.tick().await;
    loop {
        every.tick().await;
        let mut regs = shared.registers.lock().unwrap();
        for (binding, base, source) in &mut animated {
            let v = source.next();
            regs.put_value(binding, *base, v);
        }
    }
}

pub struct ModbusSimHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    tasks: Vec<JoinHandle<()>>,
}

impl ModbusSimHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn with_registers<R>(&self, f: impl FnOnce(&mut Registers) -> R) -> R {
        f(&mut self.shared.registers.lock().unwrap())
    }

    pub fn stats(&self) -> ModbusSimStats {
        let c = &self.shared.counters;
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        ModbusSimStats {
            accepted: g(&c.accepted),
            refused: g(&c.refused),
            requests: g(&c.requests),
            exceptions: g(&c.exceptions),
            writes: g(&c.writes),
            status_polls: g(&c.status_polls),
            data_reads: g(&c.data_reads),
        }
    }

    pub fn stop(&self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

impl Drop for ModbusSimHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

struct ActiveGuard(Arc<Shared>);

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        self.0.active.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let single = shared.faults.contains(&FaultModel::SingleConnectionLimit);
    let alternate = shared.faults.contains(&FaultModel::RejectAlternateConnections);
    let mut conns = 0u64;
    loop {
        let Ok((stream, _)) = listener.accept().await else { continue };
        let _ = stream.set_nodelay(true);
        shared.counters.accepted.fetch_add(1, Ordering::Relaxed);
        conns += 1;
        if alternate && conns % 2 == 0 {
            shared.counters.refused.fetch_add(1, Ordering::Relaxed);
            let _ = stream.set_zero_linger();
            drop(stream);
            continue;
        }
        let shared = shared.clone();
        tokio::spawn(async move {
            if single {
                let deadline = tokio::time::Instant::now() + SINGLE_CONNECTION_GRACE;
                loop {
                    if shared.active.compare_exchange(0, 1, Ordering::SeqCst, Ordering::SeqCst).is_ok() {
                        break;
                    }
                    if tokio::time::Instant::now() >= deadline {
                        shared.counters.refused.fetch_add(1, Ordering::Relaxed);
                        return;
                    }
                    tokio::time::sleep(Duration::from_millis(5)).await;
                }
            } else {
                shared.active.fetch_add(1, Ordering::SeqCst);
            }
            let _guard = ActiveGuard(shared.clone());
            serve(stream, &shared).await;
        });
    }
}

async fn serve(mut stream: TcpStream, shared: &Shared) {
    let mut header = [0u8; 7];
    loop {
        if stream.read_exact(&mut header).await.is_err() {
            return;
        }
        let Ok(mbap) = MbapHeader::decode(&header) else { return };
        if mbap.length < 2 || mbap.length > 254 {
            return;
        }
        let mut pdu = vec![0u8; mbap.length as usize - 1];
        if stream.read_exact(&mut pdu).await.is_err() {
            return;
        }
        shared.counters.requests.fetch_add(1, Ordering::Relaxed);
        let reply = handle_pdu(shared, &pdu);
        let mut out = Vec::with_capacity(7 + reply.len());
        MbapHeader::new(mbap.transaction_id, reply.len(), mbap.unit_id).encode(&mut out);
        out.extend_from_slice(&reply);
        if stream.write_all(&out).await.is_err() {
            return;
        }
    }
}

fn exception(shared: &Shared, fc: u8, code: ExceptionCode) -> Vec<u8> {
    shared.counters.exceptions.fetch_add(1, Ordering::Relaxed);
    vec![fc | 0x80, code.0]
}

fn touches(addr: u16, count: u16, target: u16) -> bool {
    (addr as u32..addr as u32 + count as u32).contains(&(target as u32))
}

fn handle_pdu(shared: &Shared, pdu: &[u8]) -> Vec<u8> {
    let fc = pdu[0];
    let kind = match fc {
        FC_READ_HOLDING => Some(RegisterKind::Holding),
        FC_READ_INPUT => Some(RegisterKind::Input),
        FC_WRITE_MULTIPLE => None,
        _ => return exception(shared, fc, ExceptionCode::ILLEGAL_FUNCTION),
    };
    if pdu.len() < 5 {
        return exception(shared, fc, ExceptionCode::ILLEGAL_DATA_VALUE);
    }
    let addr = u16::from_be_bytes([pdu[1], pdu[2]]);
    let count = u16::from_be_bytes([pdu[3], pdu[4]]);
    let max = if kind.is_some() { MAX_READ_COUNT } else { MAX_WRITE_COUNT };
    if count == 0 || count > max {
        return exception(shared, fc, ExceptionCode::ILLEGAL_DATA_VALUE);
    }
    if addr as u32 + count as u32 > 0x1_0000 {
        return exception(shared, fc, ExceptionCode::ILLEGAL_DATA_ADDRESS);
    }
    for f in &shared.faults {
        if let FaultModel::ExceptionOn { address, code } = f {
            if touches(addr, count, *address) {
                return exception(shared, fc, ExceptionCode(*code));
            }
        }
    }
    let handshake = shared.faults.iter().find_map(|f| match f {
        FaultModel::DelayedReady { polls, date_addr, ready_addr } => Some((*polls, *date_addr, *ready_addr)),
        _ => None,
    });

    match kind {
        Some(kind) => {
            let mut words = shared.registers.lock().unwrap().get(kind, addr, count);
            match handshake {
                Some((polls, _, ready)) if kind == RegisterKind::Holding && touches(addr, count, ready) => {
                    shared.counters.status_polls.fetch_add(1, Ordering::Relaxed);
                    let mut state = shared.handshake.lock().unwrap();
                    let is_ready = match state.as_mut() {
                        None => false,
                        Some(n) if *n >= polls => true,
                        Some(n) => {
                            *n += 1;
                            false
                        }
                    };
                    words[(ready - addr) as usize] = u16::from(is_ready);
                }
                _ => {
                    shared.counters.data_reads.fetch_add(1, Ordering::Relaxed);
                }
            }
            let mut out = Vec::with_capacity(2 + words.len() * 2);
            out.push(fc);
            out.push((words.len() * 2) as u8);
            for w in words {
                out.extend_from_slice(&w.to_be_bytes());
            }
            out
        }
        None => {
            let byte_count = pdu.get(5).copied().unwrap_or(0) as usize;
            if byte_count != count as usize * 2 || pdu.len() != 6 + byte_count {
                return exception(shared, fc, ExceptionCode::ILLEGAL_DATA_VALUE);
            }
            let words: Vec<u16> = pdu[6..].chunks_exact(2).map(|w| u16::from_be_bytes([w[0], w[1]])).collect();
            shared.registers.lock().unwrap().set(RegisterKind::Holding, addr, &words);
            shared.counters.writes.fetch_add(1, Ordering::Relaxed);
            if let Some((_, date, _)) = handshake {
                if touches(addr, count, date) {
                    *shared.handshake.lock().unwrap() = Some(0);
                }
            }
            let mut out = vec![fc];
            out.extend_from_slice(&addr.to_be_bytes());
            out.extend_from_slice(&count.to_be_bytes());
            out
        }
    }
}
