use std::collections::BTreeMap;

use gateway_ingest::{poll_http, FieldMapping, HttpPollSpec, IngestError};
use gateway_testkit::HttpStub;

fn spec(url: String) -> HttpPollSpec {
    HttpPollSpec {
        url,
        auth_header: Some("Authorization".into()),
        auth_value: Some("Bearer t0ken".into()),
        interval_secs: 60.0,
        selector: "/data".into(),
        entity_id: "aranet-{/sensor}".into(),
        field_map: vec![
            FieldMapping::new("/co2", "CO2", "ppm"),
            FieldMapping::new("/temperature", "Temperature", "Cel"),
            FieldMapping::new("/humidity", "Humidity", "%"),
        ],
        timestamp: None,
        tags: BTreeMap::new(),
        timeout_ms: 2000,
    }
}

#[tokio::test]
async fn two_objects_three_fields() {
    let stub = HttpStub::json(
        r#"{"data":[{"sensor":"a","co2":600,"temperature":21.0,"humidity":40},
                    {"sensor":"b","co2":650,"temperature":22.5,"humidity":41}]}"#,
        200,
    )
    .await;
    let points = poll_http(&reqwest::Client::new(), &spec(stub.url("/v1/telemetry"))).await.unwrap();
    assert_eq!(points.len(), 6);
    assert_eq!(points[3].entity_id, "aranet-b");
    assert_eq!(stub.requests()[0].header("authorization"), Some("Bearer t0ken"));
}

#[tokio::test]
async fn unauthorized_is_http_status() {
    let stub = HttpStub::json("{}", 401).await;
    let err = poll_http(&reqwest::Client::new(), &spec(stub.url("/"))).await.unwrap_err();
    assert_eq!(err, IngestError::HttpStatus(401));
}

#[tokio::test]
async fn empty_selection_is_schema_mismatch() {
    let stub = HttpStub::json(r#"{"data":[]}"#, 200).await;
    let err = poll_http(&reqwest::Client::new(), &spec(stub.url("/"))).await.unwrap_err();
    assert!(matches!(err, IngestError::SchemaMismatch(_)));
    let stub = HttpStub::json("<html>", 200).await;
    let err = poll_http(&reqwest::Client::new(), &spec(stub.url("/"))).await.unwrap_err();
    assert!(matches!(err, IngestError::MalformedJson(_)));
}
