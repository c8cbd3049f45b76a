use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use isodrift::forest::ForestConfig;
use isodrift::io::{detector_to_json, save_detector, to_stream_line};
use isodrift::synth::{gen_baseline, gen_stream, DriftSchedule, SynthConfig};
use isodrift::{Detector, EmbeddingRecord};
use isodrift_service::{router, Registry};

const DIM: usize = 8;

fn detector() -> Detector {
    let base = gen_baseline(&SynthConfig::new(DIM, 3).with_sizes(300, 10)).unwrap();
    Detector::fit(&base.train, ForestConfig::new(DIM).with_trees(50).with_seed(3), 3.5).unwrap()
}

fn stream_json(records: &[EmbeddingRecord]) -> Value {
    Value::Array(
        records
            .iter()
            .map(|r| serde_json::from_str(&to_stream_line(r).unwrap()).unwrap())
            .collect(),
    )
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn register(app: &axum::Router, body: String) -> String {
    let (status, v) = call(app, "POST", "/detectors", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["detector_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn register_score_status_delete() {
    let app = router(Arc::new(Registry::default()));
    let doc = detector_to_json(&detector());
    let a = register(&app, doc.clone()).await;
    let b = register(&app, doc).await;
    assert_ne!(a, b);

    let (status, v) = call(&app, "GET", &format!("/detectors/{a}/status"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["counters"], json!({"seen": 0, "scored": 0, "flagged": 0, "errors": 0}));
    assert_eq!(v["alarm_active"], false);

    let recs = gen_stream(&SynthConfig::new(DIM, 3), &DriftSchedule::none(), 3).unwrap();
    let (status, v) = call(&app, "POST", &format!("/detectors/{a}/score"), Some(stream_json(&recs).to_string())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["results"].as_array().unwrap().len(), 3);
    assert!(v["results"][0]["score"].as_f64().unwrap() > 0.0);
    assert!(v.get("window_flag_rate").is_some());

    // a single object is accepted too
    let one = serde_json::from_str::<Value>(&to_stream_line(&recs[0]).unwrap()).unwrap();
    let (status, v) = call(&app, "POST", &format!("/detectors/{a}/score"), Some(one.to_string())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["results"].as_array().unwrap().len(), 1);

    let (_, v) = call(&app, "GET", &format!("/detectors/{a}/status"), None).await;
    assert_eq!(v["counters"]["seen"], 4);

    let (status, _) = call(&app, "DELETE", &format!("/detectors/{a}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, "GET", &format!("/detectors/{a}/status"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "DELETE", &format!("/detectors/{a}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", &format!("/detectors/{a}/score"), Some("[]".into())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn registration_errors() {
    let app = router(Arc::new(Registry::default()));
    let (status, _) = call(&app, "POST", "/detectors", Some("{not json".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/detectors", Some("{\"foo\": 1}".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let doc = detector_to_json(&detector()).replace("\"format_version\":1", "\"format_version\":99");
    let (status, v) = call(&app, "POST", "/detectors", Some(doc)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{v}");

    let (status, _) = call(&app, "POST", "/detectors", Some(json!({"path": "/nonexistent/model.json"}).to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn register_from_path_with_window() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_detector(&detector(), &path).unwrap();
    let app = router(Arc::new(Registry::default()));
    let (status, v) = call(
        &app,
        "POST",
        "/detectors",
        Some(json!({"path": path, "window": 5, "alarm_rate": 0.4}).to_string()),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["window"], 5);
    assert_eq!(v["alarm_rate"], 0.4);
}

#[tokio::test]
async fn per_record_errors_do_not_fail_the_batch() {
    let app = router(Arc::new(Registry::default()));
    let id = register(&app, detector_to_json(&detector())).await;
    let recs = gen_stream(&SynthConfig::new(DIM, 4), &DriftSchedule::none(), 3).unwrap();
    let mut body = stream_json(&recs);
    body[1]["features"] = json!([1.0, 2.0]);
    let (status, v) = call(&app, "POST", &format!("/detectors/{id}/score"), Some(body.to_string())).await;
    assert_eq!(status, StatusCode::OK);
    let results = v["results"].as_array().unwrap();
    assert!(results[0].get("score").is_some());
    assert!(results[1]["error"].as_str().unwrap().contains(&format!("expected {DIM}")));
    assert_eq!(results[1]["index"], 1);
    assert!(results[2].get("score").is_some());

    let (_, v) = call(&app, "GET", &format!("/detectors/{id}/status"), None).await;
    assert_eq!(v["counters"]["errors"], 1);
    assert_eq!(v["counters"]["scored"], 2);
}

#[tokio::test]
async fn alarm_shows_in_responses_and_status() {
    let app = router(Arc::new(Registry::default()));
    let body = json!({"detector": serde_json::from_str::<Value>(&detector_to_json(&detector())).unwrap(), "window": 20});
    let id = register(&app, body.to_string()).await;
    // every record is OOD and predicted non-defect
    let recs = gen_stream(&SynthConfig::new(DIM, 5), &DriftSchedule::abrupt(0, 12.0, 1.0), 40).unwrap();
    let (_, v) = call(&app, "POST", &format!("/detectors/{id}/score"), Some(stream_json(&recs).to_string())).await;
    assert_eq!(v["alarm_active"], true);
    assert!(v["events"]
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e["event"] == "alarm_raised"));
    let (_, v) = call(&app, "GET", &format!("/detectors/{id}/status"), None).await;
    assert_eq!(v["alarm_active"], true);
    assert_eq!(v["monitor"]["alarms_raised"], 1);
    assert!(v["recent_events"].as_array().unwrap().len() <= isodrift_service::DEFAULT_RECENT_EVENTS);
}
