use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use gateway_cli::config::parse_config;
use gateway_cli::daemon::{start, supervise};
use gateway_cli::simulate::{start_modbus_sim, ModbusSimSpec};
use gateway_cli::stats::{cmd_stats, load_stats_file};
use gateway_sim::{
    run_bacnet_sim, run_mqtt_fleet, BacnetSimConfig, FleetBroker, FleetClass, FleetParameter, SimClock, SimFleet,
    ValueModel,
};
use gateway_testkit::lineproto::parse_batch;
use gateway_testkit::{BrokerOptions, HttpStub, TestBroker};
use tokio::sync::watch;

async fn dead_port() -> u16 {
    let l = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    l.local_addr().unwrap().port()
}

fn cem_sim() -> ModbusSimSpec {
    ModbusSimSpec {
        bind: "127.0.0.1:0".into(),
        map: "cem-c31".into(),
        base: 0,
        fault: None,
        seed: 9,
        model: Some(ValueModel::RandomWalk { start: 50.0, step: 1.0, min: 0.0, max: 100.0, seed: 0 }),
        tick_ms: 200,
    }
}

fn radon_fleet() -> SimFleet {
    SimFleet {
        classes: vec![FleetClass {
            kind: "radon".into(),
            count: 1,
            interval_secs: 60.0,
            change_probability: 1.0,
            parameters: vec![FleetParameter {
                name: "Radon".into(),
                unit: "Bq/m3".into(),
                model: ValueModel::Constant { value: 350.0 },
            }],
            topic: "sim/{kind}/{id}".into(),
            id_prefix: Some("radoneye".into()),
        }],
        time_compression: 60.0,
        seed: 3,
    }
}

async fn get(url: &str, token: Option<&str>) -> (u16, serde_json::Value, Duration) {
    let t0 = Instant::now();
    let mut req = reqwest::Client::new().get(url);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().await.unwrap();
    let status = resp.status().as_u16();
    let body = resp.text().await.unwrap();
    let took = t0.elapsed();
    (status, serde_json::from_str(&body).unwrap_or(serde_json::Value::Null), took)
}

fn config(dir: &Path, modbus: u16, dead: u16, bacnet: u16, mqtt: u16, sink: &str) -> String {
    let dir = dir.display();
    format!(
        r#"
gateway:
  health_addr: 127.0.0.1:0
  health_token: secret
  schedule_jitter: 0
  stats_file: {dir}/rates.json
  stats_interval_secs: 1
  drain_timeout_secs: 2
devices:
  - id: cem-01
    protocol: modbus
    kind: Circutor CEM-C31
    poll_interval: 1
    modbus:
      host: 127.0.0.1
      map: cem-c31
      policy: {{ port: {modbus}, connect_timeout_ms: 300, io_timeout_ms: 300 }}
  - id: cem-dead
    protocol: modbus
    kind: Circutor CEM-C31
    poll_interval: 1
    modbus:
      host: 127.0.0.1
      map: cem-c31
      policy: {{ port: {dead}, connect_timeout_ms: 200, io_timeout_ms: 200, retries: 0 }}
  - id: rector1
    protocol: bacnet
    kind: Rector controller
    poll_interval: 1
    bacnet:
      endpoint: {{ host: 127.0.0.1, port: {bacnet}, device_instance: 2001, timeout_ms: 300 }}
      discover: true
  - id: radoneye-000
    protocol: mqtt
    kind: RadonEye RD200
    parameters: [{{ name: Radon, unit: Bq/m3 }}]
brokers:
  - broker: {{ host: 127.0.0.1, port: {mqtt}, client_id: gateway-test }}
    bindings:
      - filter: sim/radon/+
        entity_id: "{{1}}"
        field_map: [{{ pointer: /Radon, parameter: Radon, unit: Bq/m3 }}]
        timestamp: {{ pointer: /ts, unit: millis }}
{sink}
alerts:
  rules:
    - id: radon-limit
      selector: !wildcard "radoneye-*"
      parameter: Radon
      predicate: !gt 300
      cooldown: 3600
  notifiers:
    - kind: smtp_stub
      spool_dir: {dir}/mail
      to: [ops@example.org]
"#
    )
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn end_to_end_with_simulated_devices() {
    let dir = tempfile::tempdir().unwrap();
    let modbus = start_modbus_sim(&cem_sim()).await.unwrap();
    let bacnet = run_bacnet_sim(BacnetSimConfig::inventory(2001, "Rector1", "Point", 10), "127.0.0.1:0").await.unwrap();
    let broker = TestBroker::start(BrokerOptions::default()).await.unwrap();
    let sink = format!("sink: {{ mode: file, path: {}/points.lp, batch_max_age_ms: 200 }}", dir.path().display());
    let text = config(dir.path(), modbus.port(), dead_port().await, bacnet.port(), broker.port(), &sink);
    let cfg = parse_config(&text, |_| None).unwrap().config;

    let gw = start(cfg).await.unwrap();
    let base = format!("http://{}", gw.health_addr());
    let deadline = Instant::now() + Duration::from_secs(5);
    while broker.subscriber_count() == 0 && Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let fleet = run_mqtt_fleet(
        FleetBroker::new("127.0.0.1", broker.port()),
        &radon_fleet(),
        Arc::new(SimClock::starting_now(60.0)),
    )
    .unwrap();
    tokio::time::sleep(Duration::from_millis(4500)).await;

    let (status, _, _) = get(&format!("{base}/health"), None).await;
    assert_eq!(status, 401);
    let (status, health, took) = get(&format!("{base}/health"), Some("secret")).await;
    assert!(took < Duration::from_millis(100), "{took:?}");
    assert_eq!(status, 503, "{health}");
    assert_eq!(health["status"], "degraded");
    let dev = &health["devices"];
    assert_eq!(dev["cem-01"]["status"], "ok", "{health}");
    assert_eq!(dev["rector1"]["status"], "ok", "{health}");
    assert_eq!(dev["radoneye-000"]["status"], "ok", "{health}");
    assert_eq!(dev["cem-dead"]["status"], "failing", "{health}");
    assert!(dev["cem-dead"]["consecutive_failures"].as_u64().unwrap() >= 3);
    assert!(dev["cem-dead"]["last_success"].is_null());
    assert_eq!(health["sink"]["ok"], true);

    let (_, metrics, _) = get(&format!("{base}/metrics"), Some("secret")).await;
    assert!(metrics["alerts"]["fired"].as_u64().unwrap() >= 1, "{metrics}");
    assert!(metrics["ingest"][0]["messages"].as_u64().unwrap() >= 2);

    fleet.stop();
    let report = gw.shutdown().await;
    assert!(!report.drain_timed_out);
    assert_eq!(report.undelivered, 0);
    assert_eq!(report.pipeline.shed, 0);
    assert_eq!(report.pipeline.flushed, report.pipeline.emitted);

    let lines = std::fs::read_to_string(dir.path().join("points.lp")).unwrap();
    let parsed = parse_batch(&lines).unwrap();
    assert_eq!(parsed.len() as u64, report.pipeline.flushed);
    for id in ["cem-01", "rector1", "radoneye-000"] {
        assert!(lines.contains(&format!("device={id}")), "no points from {id}");
    }
    assert!(!lines.contains("cem-dead"));

    let mail: Vec<_> = std::fs::read_dir(dir.path().join("mail")).unwrap().collect();
    assert_eq!(mail.len(), 1, "one alert within the cooldown");

    let rates = load_stats_file(&dir.path().join("rates.json")).unwrap();
    let report = cmd_stats(&rates, None).unwrap();
    let cem = report.rows.iter().find(|r| r.device_kind == "Circutor CEM-C31").unwrap();
    assert_eq!(cem.n_devices, 2);
    assert_eq!(cem.total_params, 46);
    assert!(report.table().contains("Rector controller"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn survives_a_failing_sink() {
    let dir = tempfile::tempdir().unwrap();
    let modbus = start_modbus_sim(&cem_sim()).await.unwrap();
    let bacnet = run_bacnet_sim(BacnetSimConfig::inventory(2001, "Rector1", "Point", 4), "127.0.0.1:0").await.unwrap();
    let stub = HttpStub::start([], 503).await;
    let sink = format!(
        "sink:\n  mode: http\n  url: {}\n  batch_max_age_ms: 200\n  retry: {{ attempts: 3, backoff_ms: 300, max_backoff_ms: 1000 }}",
        stub.url("/write")
    );
    // no broker listening: the subscriber keeps reconnecting
    let text = config(dir.path(), modbus.port(), dead_port().await, bacnet.port(), dead_port().await, &sink);
    let cfg = parse_config(&text, |_| None).unwrap().config;
    let gw = start(cfg).await.unwrap();
    let base = format!("http://{}", gw.health_addr());

    let mut worst = Duration::ZERO;
    for _ in 0..20 {
        tokio::time::sleep(Duration::from_millis(150)).await;
        let (_, _, took) = get(&format!("{base}/health"), Some("secret")).await;
        worst = worst.max(took);
    }
    assert!(worst < Duration::from_millis(100), "health took {worst:?} while the sink was failing");
    let (status, health, _) = get(&format!("{base}/health"), Some("secret")).await;
    assert_eq!(status, 503);
    assert_eq!(health["sink"]["ok"], false, "{health}");
    assert_eq!(health["devices"]["cem-01"]["status"], "ok");
    assert!(health["pipeline"]["buffered"].as_u64().unwrap() > 0);
    assert!(!stub.requests().is_empty());

    let report = gw.shutdown().await;
    assert!(report.undelivered > 0 || report.drain_timed_out);
    assert_eq!(report.pipeline.flushed, 0);
}

#[tokio::test]
async fn supervisor_restarts_exited_tasks() {
    let runs = Arc::new(AtomicU64::new(0));
    let restarts = Arc::new(AtomicU64::new(0));
    let (tx, rx) = watch::channel(false);
    let r = runs.clone();
    let stop = rx.clone();
    let h = supervise("flaky".into(), restarts.clone(), rx, move || {
        let (r, mut stop) = (r.clone(), stop.clone());
        async move {
            if r.fetch_add(1, Ordering::Relaxed) == 0 {
                panic!("first run dies");
            }
            let _ = stop.wait_for(|s| *s).await;
        }
    });
    tokio::time::sleep(Duration::from_millis(1300)).await;
    assert_eq!(runs.load(Ordering::Relaxed), 2);
    assert_eq!(restarts.load(Ordering::Relaxed), 1);
    tx.send(true).unwrap();
    tokio::time::timeout(Duration::from_secs(1), h).await.unwrap().unwrap();
}
