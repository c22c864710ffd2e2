//! Scheduled Modbus and BACnet polling tasks.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use gateway_bacnet::types::units_name;
use gateway_bacnet::{BacnetClient, ObjectRef, PropertyQuery};
use gateway_core::{DataPoint, Inlet, Timestamp};
use gateway_ingest::stopped;
use gateway_modbus::{poll_device, read_historical_block, ModbusClient};
use gateway_pipeline::PollSchedule;
use tokio::sync::watch;
use tokio::time::Instant;
use tracing::{debug, warn};

use crate::config::DeviceConfig;
use crate::health::HealthState;

#[derive(Clone)]
pub struct PollContext {
    pub inlet: Arc<dyn Inlet>,
    pub health: Arc<HealthState>,
    pub jitter: f64,
    pub seed: u64,
}

impl PollContext {
    fn schedule(&self, dev: &DeviceConfig) -> Option<PollSchedule> {
        let mut h = DefaultHasher::new();
        (self.seed, &dev.id).hash(&mut h);
        let interval = dev.poll_interval?;
        PollSchedule::new(interval, self.jitter, 0.0, h.finish()).ok()
    }
}

/// Waits for the next firing, skipping any that were missed while a slow
/// poll was running. Returns false on shutdown.
async fn wait_next(sched: &mut PollSchedule, base: Instant, shutdown: &mut watch::Receiver<bool>) -> bool {
    let mut at = base + Duration::from_secs_f64(sched.next_fire());
    let now = Instant::now();
    while at + Duration::from_secs_f64(sched.interval()) < now {
        at = base + Duration::from_secs_f64(sched.next_fire());
    }
    tokio::select! {
        _ = tokio::time::sleep_until(at) => true,
        _ = stopped(shutdown) => false,
    }
}

pub async fn run_modbus_poller(dev: DeviceConfig, ctx: PollContext, mut shutdown: watch::Receiver<bool>) {
    let (Some(device), Some(section), Some(mut sched)) = (dev.modbus_device(), dev.modbus.clone(), ctx.schedule(&dev))
    else {
        warn!(device = %dev.id, "not a pollable modbus device");
        return;
    };
    let historical = dev.historical();
    let mut client = ModbusClient::new(device.host.clone(), device.unit_id, section.policy.clone());
    let base = Instant::now();
    while wait_next(&mut sched, base, &mut shutdown).await {
        if let Some(h) = &historical {
            let date = Utc::now().date_naive() - chrono::Days::new(section.historical_days_back as u64);
            match read_historical_block(&mut client, &device, date, h).await {
                Ok(block) => {
                    debug!(device = %dev.id, %date, polls = block.status_polls, "historical block read");
                    ctx.health.success(&dev.id, Timestamp::now());
                    block.points.into_iter().for_each(|dp| ctx.inlet.submit(dp));
                }
                Err(e) => {
                    warn!(device = %dev.id, %date, error = %e, "historical read failed");
                    ctx.health.failure(&dev.id, e.to_string());
                }
            }
            continue;
        }
        let report = poll_device(&mut client, &device).await;
        if let Some(e) = report.connection_error() {
            warn!(device = %dev.id, error = %e, "modbus device unreachable");
            ctx.health.failure(&dev.id, e.to_string());
        } else if report.points.is_empty() && !report.errors.is_empty() {
            ctx.health.failure(&dev.id, report.errors[0].error.to_string());
        } else {
            for e in &report.errors {
                warn!(device = %dev.id, parameter = %e.parameter, error = %e.error, "register read failed");
            }
            ctx.health.success(&dev.id, Timestamp::now());
        }
        report.points.into_iter().for_each(|dp| ctx.inlet.submit(dp));
    }
    client.close().await;
}

#[derive(Debug, Clone)]
struct Target {
    object: ObjectRef,
    parameter: String,
    unit: String,
}

pub async fn run_bacnet_poller(dev: DeviceConfig, ctx: PollContext, mut shutdown: watch::Receiver<bool>) {
    let (Some(section), Some(mut sched)) = (dev.bacnet.clone(), ctx.schedule(&dev)) else {
        warn!(device = %dev.id, "not a pollable bacnet device");
        return;
    };
    let tags: Vec<(String, String)> = dev.tags.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let configured: Vec<Target> = section
        .objects
        .iter()
        .map(|o| Target { object: o.object, parameter: o.parameter_name(), unit: o.unit.clone() })
        .collect();
    let mut client: Option<BacnetClient> = None;
    let mut targets: Option<Vec<Target>> = (!section.discover).then(|| configured.clone());
    let base = Instant::now();
    while wait_next(&mut sched, base, &mut shutdown).await {
        if client.is_none() {
            match BacnetClient::connect(section.endpoint.clone()).await {
                Ok(c) => client = Some(c),
                Err(e) => {
                    ctx.health.failure(&dev.id, e.to_string());
                    continue;
                }
            }
        }
        let c = client.as_ref().expect("connected above");
        if targets.is_none() {
            match c.discover_objects().await {
                Ok(d) => {
                    let mut t = configured.clone();
                    for o in d.objects {
                        if t.iter().any(|x| x.object == o.object) {
                            continue;
                        }
                        let Some(name) = o.name else { continue };
                        let unit = o.units.and_then(units_name).unwrap_or_default().to_string();
                        t.push(Target { object: o.object, parameter: name, unit });
                    }
                    debug!(device = %dev.id, objects = t.len(), partial = d.partial, "bacnet discovery");
                    targets = Some(t);
                }
                Err(e) => {
                    warn!(device = %dev.id, error = %e, "bacnet discovery failed");
                    ctx.health.failure(&dev.id, e.to_string());
                    continue;
                }
            }
        }
        let t = targets.as_ref().expect("resolved above");
        let queries: Vec<PropertyQuery> = t.iter().map(|x| PropertyQuery::present_value(x.object)).collect();
        match c.read_property_multiple(&queries).await {
            Ok(res) => {
                let at = Timestamp::now();
                let mut ok = 0;
                for (entry, target) in res.entries.iter().zip(t) {
                    match entry.value() {
                        Ok(v) => {
                            ok += 1;
                            let mut dp = DataPoint::new(dev.id.clone(), target.parameter.clone(), v, at)
                                .with_unit(target.unit.clone());
                            dp.tags = tags.clone();
                            ctx.inlet.submit(dp);
                        }
                        Err(e) => debug!(device = %dev.id, object = %target.object, error = %e.name(), "bacnet entry failed"),
                    }
                }
                if ok == 0 && !t.is_empty() {
                    ctx.health.failure(&dev.id, "every object read failed");
                } else {
                    ctx.health.success(&dev.id, at);
                }
                if section.discover && ok < t.len() {
                    targets = None;
                }
            }
            Err(e) => {
                warn!(device = %dev.id, error = %e, "bacnet read failed");
                ctx.health.failure(&dev.id, e.to_string());
            }
        }
    }
}
