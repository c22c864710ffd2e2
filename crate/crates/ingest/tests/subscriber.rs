use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use gateway_core::{DataPoint, Inlet};
use gateway_ingest::{Backoff, BrokerConfig, FieldMapping, IngestError, Subscriber, TopicBinding};
use gateway_testkit::{BrokerOptions, TestBroker};
use rumqttc::{AsyncClient, MqttOptions, QoS};
use tokio::sync::watch;

#[derive(Default)]
struct Collect(Mutex<Vec<DataPoint>>);

impl Inlet for Collect {
    fn submit(&self, dp: DataPoint) {
        self.0.lock().unwrap().push(dp);
    }
}

impl Collect {
    fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }
}

fn binding() -> TopicBinding {
    TopicBinding::new(
        "aranet/+/json",
        "aranet-{1}",
        vec![
            FieldMapping::new("/seq", "Seq", ""),
            FieldMapping::new("/co2", "CO2", "ppm"),
        ],
    )
}

fn broker_cfg(port: u16) -> BrokerConfig {
    let mut c = BrokerConfig::new("127.0.0.1", port, "gateway-test");
    c.backoff = Backoff {
        initial_ms: 50,
        max_ms: 200,
        multiplier: 2.0,
    };
    c.keep_alive_secs = 5;
    c
}

async fn publisher(port: u16, id: &str) -> AsyncClient {
    let mut o = MqttOptions::new(id, "127.0.0.1", port);
    o.set_keep_alive(Duration::from_secs(5));
    let (client, mut el) = AsyncClient::new(o, 1000);
    tokio::spawn(async move {
        loop {
            if el.poll().await.is_err() {
                tokio::time::sleep(Duration::from_millis(50)).await;
            }
        }
    });
    client
}

async fn wait_for(mut cond: impl FnMut() -> bool, ms: u64) -> bool {
    let deadline = tokio::time::Instant::now() + Duration::from_millis(ms);
    while tokio::time::Instant::now() < deadline {
        if cond() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    cond()
}

fn start(sub: Subscriber, inlet: Arc<Collect>) -> (watch::Sender<bool>, tokio::task::JoinHandle<Result<(), IngestError>>) {
    let (tx, rx) = watch::channel(false);
    let handle = tokio::spawn(async move { sub.run(inlet, rx).await });
    (tx, handle)
}

#[tokio::test]
async fn ingests_and_survives_broker_restart() {
    let broker = TestBroker::start(BrokerOptions::default()).await.unwrap();
    let inlet = Arc::new(Collect::default());
    let sub = Subscriber::new(broker_cfg(broker.port()), vec![binding()]).unwrap();
    let stats = sub.stats();
    let (stop, handle) = start(sub, inlet.clone());
    assert!(wait_for(|| broker.subscriber_count() == 1, 3000).await);

    let p = publisher(broker.port(), "pub-1").await;
    for i in 0..5 {
        p.publish("aranet/s1/json", QoS::AtLeastOnce, false, format!(r#"{{"seq":{i},"co2":600}}"#))
            .await
            .unwrap();
    }
    assert!(wait_for(|| inlet.len() == 10, 3000).await, "got {}", inlet.len());
    assert_eq!(inlet.0.lock().unwrap()[0].entity_id, "aranet-s1");

    broker.restart().await.unwrap();
    assert!(wait_for(|| broker.subscriber_count() == 1, 5000).await, "subscriber did not come back");
    let p = publisher(broker.port(), "pub-2").await;
    p.publish("aranet/s2/json", QoS::AtLeastOnce, false, r#"{"seq":99,"co2":700}"#)
        .await
        .unwrap();
    assert!(wait_for(|| inlet.len() == 12, 3000).await, "post-restart message lost");
    assert!(stats.connects.load(std::sync::atomic::Ordering::Relaxed) >= 2);

    p.publish("aranet/s2/json", QoS::AtLeastOnce, false, "not json").await.unwrap();
    assert!(wait_for(|| stats.parse_errors.load(std::sync::atomic::Ordering::Relaxed) == 1, 3000).await);

    stop.send(true).unwrap();
    assert!(handle.await.unwrap().is_ok());
}

#[tokio::test]
async fn wrong_password_is_auth_failure() {
    let broker = TestBroker::start(BrokerOptions {
        credentials: Some(("gateway".into(), "right".into())),
        ..Default::default()
    })
    .await
    .unwrap();
    let sub = Subscriber::new(broker_cfg(broker.port()).with_credentials("gateway", "wrong"), vec![binding()]).unwrap();
    let (_stop, handle) = start(sub, Arc::new(Collect::default()));
    let res = tokio::time::timeout(Duration::from_secs(5), handle).await.unwrap().unwrap();
    assert!(matches!(res, Err(IngestError::AuthFailure(_))));
}

#[tokio::test]
async fn lossy_broker_never_duplicates() {
    let broker = TestBroker::start(BrokerOptions {
        drop_fraction: 0.1,
        seed: 7,
        ..Default::default()
    })
    .await
    .unwrap();
    let inlet = Arc::new(Collect::default());
    let sub = Subscriber::new(broker_cfg(broker.port()), vec![binding()]).unwrap();
    let (stop, _handle) = start(sub, inlet.clone());
    assert!(wait_for(|| broker.subscriber_count() == 1, 3000).await);

    let p = publisher(broker.port(), "pub-lossy").await;
    let n = 500;
    for i in 0..n {
        p.publish("aranet/s1/json", QoS::AtLeastOnce, false, format!(r#"{{"seq":{i},"co2":1}}"#))
            .await
            .unwrap();
    }
    let delivered = || broker.stats().delivered.load(std::sync::atomic::Ordering::Relaxed) as usize;
    let dropped = || broker.stats().dropped.load(std::sync::atomic::Ordering::Relaxed) as usize;
    assert!(wait_for(|| delivered() + dropped() == n, 5000).await);
    assert!(wait_for(|| inlet.len() == 2 * delivered(), 5000).await);

    let mut per_seq: HashMap<i64, usize> = HashMap::new();
    for dp in inlet.0.lock().unwrap().iter().filter(|d| d.parameter == "Seq") {
        *per_seq.entry(dp.value.as_real().unwrap() as i64).or_default() += 1;
    }
    assert!(per_seq.values().all(|c| *c == 1), "duplicate points for one message");
    assert_eq!(per_seq.len(), delivered());
    assert!(dropped() > 0 && dropped() < n / 5);
    stop.send(true).unwrap();
}
