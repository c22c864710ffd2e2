//! The long-running gateway: pollers, subscribers, pipeline, alerts and the
//! health endpoint under one supervisor.

use std::collections::HashSet;
use std::future::Future;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use gateway_alerts::{run_notifiers, AlertEngine};
use gateway_core::{DataPoint, Inlet, Protocol};
use gateway_ingest::{run_http_poller, stopped, Subscriber};
use gateway_pipeline::{run_flusher, Pipeline, PipelineOptions, PipelineStats, Sink};
use serde::Serialize;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tracing::{error, info, warn};

use crate::config::GatewayConfig;
use crate::health::{serve, HealthState};
use crate::pollers::{run_bacnet_poller, run_modbus_poller, PollContext};

const MAX_RESTART_BACKOFF: Duration = Duration::from_secs(60);
const STOP_GRACE: Duration = Duration::from_secs(5);

/// Fans every received point out to the alert engine and the pipeline, and
/// marks declared push devices alive.
pub struct Tee {
    pub pipeline: Arc<Pipeline>,
    pub alerts: Option<Arc<AlertEngine>>,
    pub health: Arc<HealthState>,
    pub push_devices: HashSet<String>,
}

impl Inlet for Tee {
    fn submit(&self, dp: DataPoint) {
        if self.push_devices.contains(&dp.entity_id) {
            self.health.success(&dp.entity_id, dp.timestamp);
        }
        if let Some(a) = &self.alerts {
            a.submit(dp.clone());
        }
        self.pipeline.submit(dp);
    }
}

/// Runs `make()` until shutdown, restarting it with exponential backoff
/// whenever it returns or panics early.
pub fn supervise<F, Fut>(name: String, restarts: Arc<AtomicU64>, mut shutdown: watch::Receiver<bool>, mut make: F) -> JoinHandle<()>
where
    F: FnMut() -> Fut + Send + 'static,
    Fut: Future<Output = ()> + Send + 'static,
{
    tokio::spawn(async move {
        let mut backoff = Duration::from_secs(1);
        loop {
            let mut task = tokio::spawn(make());
            let res = tokio::select! {
                r = &mut task => r,
                _ = stopped(&mut shutdown) => {
                    if tokio::time::timeout(STOP_GRACE, &mut task).await.is_err() {
                        warn!(task = %name, "task ignored shutdown, aborting");
                        task.abort();
                    }
                    return;
                }
            };
            if *shutdown.borrow() {
                return;
            }
            match res {
                Err(e) if e.is_panic() => error!(task = %name, "task panicked, restarting"),
                _ => warn!(task = %name, "task exited, restarting"),
            }
            restarts.fetch_add(1, Ordering::Relaxed);
            tokio::select! {
                _ = tokio::time::sleep(backoff) => {}
                _ = stopped(&mut shutdown) => return,
            }
            backoff = (backoff * 2).min(MAX_RESTART_BACKOFF);
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DrainReport {
    pub pipeline: PipelineStats,
    /// Points still buffered when the gateway exited.
    pub undelivered: u64,
    pub drain_timed_out: bool,
    pub restarts: u64,
}

pub struct RunningGateway {
    pub health: Arc<HealthState>,
    pub pipeline: Arc<Pipeline>,
    pub alerts: Arc<AlertEngine>,
    health_addr: SocketAddr,
    stop_intake: watch::Sender<bool>,
    stop_flush: watch::Sender<bool>,
    stop_rest: watch::Sender<bool>,
    intake: Vec<JoinHandle<()>>,
    flusher: JoinHandle<()>,
    notifier: JoinHandle<()>,
    background: Vec<JoinHandle<()>>,
    restarts: Arc<AtomicU64>,
    drain_timeout: Duration,
    stats_file: Option<std::path::PathBuf>,
}

pub async fn start(cfg: GatewayConfig) -> anyhow::Result<RunningGateway> {
    let g = &cfg.gateway;
    let pipeline = Arc::new(Pipeline::new(PipelineOptions {
        heartbeat_secs: g.heartbeat_secs,
        shards: g.shards,
        buffer_capacity: cfg.sink.buffer_capacity,
        batch_max_points: cfg.sink.batch_max_points,
    }));
    let sink = Sink::new(cfg.sink.clone())?;

    let (events_tx, events_rx) = mpsc::channel(cfg.alerts.queue.unwrap_or(1024));
    let alerts = Arc::new(AlertEngine::new(cfg.alerts.rules.clone()).with_sink(events_tx));
    let health = Arc::new(HealthState::new(pipeline.clone(), Some(alerts.stats())));

    let mut push_devices = HashSet::new();
    for d in &cfg.devices {
        let spec = d.spec();
        pipeline.register_device(&d.id, spec.kind_label(), d.parameter_names().len());
        health.register(&d.id);
        if matches!(d.protocol, Protocol::Mqtt | Protocol::Http) {
            push_devices.insert(d.id.clone());
        }
    }
    let tee: Arc<dyn Inlet> = Arc::new(Tee {
        pipeline: pipeline.clone(),
        alerts: (!cfg.alerts.rules.is_empty()).then(|| alerts.clone()),
        health: health.clone(),
        push_devices,
    });

    let (stop_intake, intake_rx) = watch::channel(false);
    let (stop_flush, flush_rx) = watch::channel(false);
    let (stop_rest, rest_rx) = watch::channel(false);
    let restarts = Arc::new(AtomicU64::new(0));

    let server = serve(&g.health_addr, health.clone(), g.health_token.clone(), rest_rx.clone()).await?;
    info!(addr = %server.addr, "health endpoint listening");

    let ctx = PollContext { inlet: tee.clone(), health: health.clone(), jitter: g.schedule_jitter, seed: g.seed };
    let mut intake = Vec::new();
    for d in &cfg.devices {
        let (d, ctx, rx) = (d.clone(), ctx.clone(), intake_rx.clone());
        let name = format!("poller {}", d.id);
        let handle = match d.protocol {
            Protocol::Modbus => supervise(name, restarts.clone(), intake_rx.clone(), move || {
                run_modbus_poller(d.clone(), ctx.clone(), rx.clone())
            }),
            Protocol::Bacnet => supervise(name, restarts.clone(), intake_rx.clone(), move || {
                run_bacnet_poller(d.clone(), ctx.clone(), rx.clone())
            }),
            _ => continue,
        };
        intake.push(handle);
    }
    for (i, b) in cfg.brokers.iter().enumerate() {
        let sub = Arc::new(Subscriber::new(b.broker.clone(), b.bindings.clone())?);
        health.add_ingest(sub.stats());
        let (inlet, rx) = (tee.clone(), intake_rx.clone());
        intake.push(supervise(format!("broker {i} {}", b.broker.host), restarts.clone(), intake_rx.clone(), move || {
            let (sub, inlet, rx) = (sub.clone(), inlet.clone(), rx.clone());
            async move {
                if let Err(e) = sub.run(inlet, rx).await {
                    warn!(error = %e, "subscriber stopped");
                }
            }
        }));
    }
    for h in &cfg.http_polls {
        let (spec, inlet, rx) = (h.clone(), tee.clone(), intake_rx.clone());
        intake.push(supervise(format!("http {}", h.url), restarts.clone(), intake_rx.clone(), move || {
            run_http_poller(spec.clone(), inlet.clone(), rx.clone())
        }));
    }

    let flusher = tokio::spawn(run_flusher(pipeline.clone(), sink, flush_rx));
    let notifier = tokio::spawn(run_notifiers(events_rx, cfg.alerts.notifiers.clone(), alerts.stats()));

    let mut background = vec![server.task];
    if let Some(path) = g.stats_file.clone() {
        let (p, mut rx) = (pipeline.clone(), rest_rx.clone());
        let every = Duration::from_secs_f64(g.stats_interval_secs);
        background.push(tokio::spawn(async move {
            loop {
                tokio::select! {
                    _ = tokio::time::sleep(every) => {}
                    _ = stopped(&mut rx) => return,
                }
                if let Err(e) = write_stats(&p, &path) {
                    warn!(path = %path.display(), error = %e, "cannot write stats file");
                }
            }
        }));
    }

    Ok(RunningGateway {
        health,
        pipeline,
        alerts,
        health_addr: server.addr,
        stop_intake,
        stop_flush,
        stop_rest,
        intake,
        flusher,
        notifier,
        background,
        restarts,
        drain_timeout: Duration::from_secs_f64(g.drain_timeout_secs),
        stats_file: g.stats_file.clone(),
    })
}

/// Writes the current rate counters as JSON, replacing the file atomically.
pub fn write_stats(pipeline: &Pipeline, path: &Path) -> std::io::Result<()> {
    let json = serde_json::to_vec_pretty(&pipeline.rate_stats()).map_err(std::io::Error::other)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, json)?;
    std::fs::rename(tmp, path)
}

impl RunningGateway {
    pub fn health_addr(&self) -> SocketAddr {
        self.health_addr
    }

    pub fn restarts(&self) -> u64 {
        self.restarts.load(Ordering::Relaxed)
    }

    /// Stops intake, drains the buffer within the drain timeout, then stops
    /// notifiers and the health endpoint.
    pub async fn shutdown(self) -> DrainReport {
        info!("stopping intake");
        self.health.set_draining();
        let _ = self.stop_intake.send(true);
        for t in self.intake {
            let _ = t.await;
        }

        info!(buffered = self.pipeline.buffered(), "draining");
        let _ = self.stop_flush.send(true);
        let mut flusher = self.flusher;
        let drain_timed_out = tokio::time::timeout(self.drain_timeout, &mut flusher).await.is_err();
        if drain_timed_out {
            flusher.abort();
            warn!(buffered = self.pipeline.buffered(), "drain timed out");
        }

        drop(self.alerts);
        let _ = tokio::time::timeout(Duration::from_secs(2), self.notifier).await;
        if let Some(path) = &self.stats_file {
            if let Err(e) = write_stats(&self.pipeline, path) {
                warn!(path = %path.display(), error = %e, "cannot write stats file");
            }
        }
        let _ = self.stop_rest.send(true);
        for t in self.background {
            let _ = tokio::time::timeout(Duration::from_secs(2), t).await;
        }
        let stats = self.pipeline.stats();
        DrainReport {
            pipeline: stats,
            undelivered: stats.buffered,
            drain_timed_out,
            restarts: self.restarts.load(Ordering::Relaxed),
        }
    }
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn termination() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

pub async fn run_until(cfg: GatewayConfig, stop: impl Future<Output = ()>) -> anyhow::Result<DrainReport> {
    let gw = start(cfg).await?;
    stop.await;
    info!("shutdown requested");
    Ok(gw.shutdown().await)
}
