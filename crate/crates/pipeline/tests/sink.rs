use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use gateway_core::{DataPoint, Timestamp};
use gateway_pipeline::{
    flush_once, run_flusher, FlushOutcome, Pipeline, PipelineOptions, RetryPolicy, Sink, SinkConfig,
};
use gateway_testkit::lineproto::parse_batch;
use gateway_testkit::HttpStub;
use tokio::sync::watch;

fn points(n: usize) -> Vec<DataPoint> {
    (0..n)
        .map(|i| {
            DataPoint::new(format!("dev-{}", i % 7), "CO2", i as f64, Timestamp::from_secs(i as i64))
                .with_unit("ppm")
        })
        .collect()
}

fn http_cfg(stub: &HttpStub, attempts: u32) -> SinkConfig {
    let mut c = SinkConfig::http(stub.url("/api/v2/write"), Some("s3cret".into()));
    c.retry = RetryPolicy { attempts, backoff_ms: 5, max_backoff_ms: 20 };
    c.timeout_ms = 2000;
    c
}

#[tokio::test]
async fn ack_on_204() {
    let stub = HttpStub::start([], 204).await;
    let sink = Sink::new(http_cfg(&stub, 3)).unwrap();
    assert_eq!(sink.flush(&points(3)).await, FlushOutcome::Ack { attempts: 1 });
    let req = &stub.requests()[0];
    assert_eq!(req.method, "POST");
    assert_eq!(req.header("authorization"), Some("Token s3cret"));
    assert_eq!(req.header("content-type"), Some("text/plain; charset=utf-8"));
    assert_eq!(parse_batch(&req.body).unwrap().len(), 3);
}

#[tokio::test]
async fn transient_errors_are_retried_once_delivered() {
    let stub = HttpStub::start([503, 503], 204).await;
    let sink = Sink::new(http_cfg(&stub, 3)).unwrap();
    assert_eq!(sink.flush(&points(4)).await, FlushOutcome::Ack { attempts: 3 });
    let ok = stub.accepted();
    assert_eq!(ok.len(), 1);
    assert_eq!(parse_batch(&ok[0].body).unwrap().len(), 4);
}

#[tokio::test]
async fn exhausted_retries_fail_and_requeue() {
    let stub = HttpStub::start([], 503).await;
    let sink = Sink::new(http_cfg(&stub, 2)).unwrap();
    assert!(matches!(sink.flush(&points(1)).await, FlushOutcome::Failed { attempts: 2, .. }));

    let pipe = Pipeline::new(PipelineOptions { heartbeat_secs: 0, ..Default::default() });
    for p in points(5) {
        pipe.submit(p);
    }
    let batch = pipe.take_batch(5);
    assert!(!flush_once(&pipe, &sink, batch).await);
    assert_eq!(pipe.buffered(), 5);
    assert_eq!(pipe.stats().failed_flushes, 1);
}

#[tokio::test]
async fn client_error_goes_to_dead_letter() {
    let dir = tempfile::tempdir().unwrap();
    let dl = dir.path().join("dead.lp");
    let stub = HttpStub::start([400], 204).await;
    let mut cfg = http_cfg(&stub, 3);
    cfg.dead_letter = Some(dl.clone());
    let sink = Sink::new(cfg).unwrap();
    let pipe = Pipeline::new(PipelineOptions { heartbeat_secs: 0, ..Default::default() });
    for p in points(6) {
        pipe.submit(p);
    }
    assert!(flush_once(&pipe, &sink, pipe.take_batch(3)).await);
    assert!(flush_once(&pipe, &sink, pipe.take_batch(3)).await);
    let stats = pipe.stats();
    assert_eq!((stats.dead_lettered, stats.flushed, stats.buffered), (3, 3, 0));
    let text = std::fs::read_to_string(&dl).unwrap();
    assert!(text.starts_with("# rejected status=400 points=3"));
    assert_eq!(parse_batch(&text).unwrap().len(), 3);
    assert_eq!(stub.requests().len(), 2);
}

#[tokio::test]
async fn file_sink_appends_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.lp");
    let sink = Sink::new(SinkConfig::file(&path)).unwrap();
    sink.flush(&points(2)).await;
    sink.flush(&points(3)).await;
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.ends_with('\n'));
    assert_eq!(parse_batch(&text).unwrap().len(), 5);
}

#[tokio::test]
async fn flusher_delivers_every_emitted_point_under_transient_failures() {
    let stub = HttpStub::start([503, 204, 503, 503, 204, 500, 503], 204).await;
    let mut cfg = http_cfg(&stub, 2);
    cfg.batch_max_points = 500;
    cfg.batch_max_age_ms = 20;
    let pipe = Arc::new(Pipeline::new(PipelineOptions {
        heartbeat_secs: 0,
        shards: 8,
        buffer_capacity: 20_000,
        batch_max_points: 500,
    }));
    let (tx, rx) = watch::channel(false);
    let flusher = tokio::spawn(run_flusher(pipe.clone(), Sink::new(cfg).unwrap(), rx));

    let mut emitted = HashSet::new();
    for (i, p) in points(10_000).into_iter().enumerate() {
        emitted.insert((p.entity_id.clone(), p.timestamp.as_nanos()));
        pipe.submit(p);
        if i % 1000 == 0 {
            tokio::task::yield_now().await;
        }
    }
    let deadline = tokio::time::Instant::now() + Duration::from_secs(20);
    while pipe.stats().flushed < 10_000 && tokio::time::Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    tx.send(true).unwrap();
    flusher.await.unwrap();

    let mut stored = HashSet::new();
    for req in stub.accepted() {
        for line in parse_batch(&req.body).unwrap() {
            let dev = line.tags.iter().find(|(k, _)| k == "device").unwrap().1.clone();
            stored.insert((dev, line.timestamp.unwrap()));
        }
    }
    assert_eq!(stored, emitted);
    assert_eq!(pipe.stats().shed, 0);
    assert!(pipe.stats().failed_flushes >= 1);
}
