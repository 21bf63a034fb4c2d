use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use weldwatch::server::{router, AppState};
use weldwatch_core::data::ScenarioSplit;
use weldwatch_core::{pipeline, ExperimentConfig, MonitorSettings, MonitorState, SampleRecord};

struct Fixture {
    app: Arc<AppState>,
    split: ScenarioSplit,
}

fn fixture() -> Fixture {
    let mut cfg = ExperimentConfig::default();
    cfg.update.train.epochs = 40;
    let ds = pipeline::simulate(&cfg).unwrap();
    let split = pipeline::split(&cfg, &ds).unwrap();
    let model = pipeline::train_model(&cfg, &split.train_known).unwrap();
    let bank = pipeline::fit_bank(&cfg, &model, &split.train_known).unwrap();
    let state = MonitorState::new(model, bank, split.train_known.records.clone(), MonitorSettings::from_config(&cfg)).unwrap();
    Fixture {
        app: AppState::new(state, None),
        split,
    }
}

async fn call(router: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = router.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).expect("JSON response body") };
    (status, value)
}

fn batch(split: &ScenarioSplit) -> Vec<SampleRecord> {
    split.test_known.records.iter().chain(&split.withheld.records).cloned().collect()
}

/// Detects and clusters the batch, leaving the state at revision 2.
async fn detect_and_cluster(router: &Router, split: &ScenarioSplit) {
    let (status, body) = call(router, Method::POST, "/detect", Some(json!({ "samples": batch(split) }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["revision"], 1);
    let (status, body) = call(router, Method::POST, "/cluster", Some(json!({}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["revision"], 2);
}

#[tokio::test]
async fn labeling_round_trip_is_idempotent() {
    let f = fixture();
    let r = router(f.app.clone());
    let (status, state) = call(&r, Method::GET, "/state", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["revision"], 0);
    assert_eq!(state["counts"]["classes"], 6);

    detect_and_cluster(&r, &f.split).await;
    let (_, metrics) = call(&r, Method::GET, "/metrics", None).await;
    assert!(metrics["metrics"]["unknown_recall"].as_f64().unwrap() > 0.9);

    let (_, clusters) = call(&r, Method::GET, "/clusters", None).await;
    let list = clusters["clusters"].as_array().unwrap();
    assert!(!list.is_empty());
    let largest = list.iter().max_by_key(|c| c["members"].as_array().unwrap().len()).unwrap();
    let size = largest["members"].as_array().unwrap().len() as u64;
    let first_member = largest["members"][0]["sample_id"].as_str().unwrap();
    assert_eq!(largest["similarity"][first_member].as_array().unwrap().len(), 6);
    let (_, before) = call(&r, Method::GET, "/state", None).await;

    let submission = json!({
        "request_token": "tok-1",
        "expected_revision": 2,
        "assignments": [{ "cluster_id": largest["cluster_id"], "label": "novel_fault" }],
    });
    let (status, first) = call(&r, Method::POST, "/labels", Some(submission.clone())).await;
    assert_eq!(status, StatusCode::OK, "{first}");
    assert_eq!(first["revision"], 3);
    assert_eq!(first["counts"]["classes"], 7);
    assert_eq!(first["labels"].as_array().unwrap().last().unwrap(), "novel_fault");
    assert_eq!(
        first["counts"]["flagged"].as_u64().unwrap(),
        before["counts"]["flagged"].as_u64().unwrap() - size
    );

    let (status, again) = call(&r, Method::POST, "/labels", Some(submission)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again, first);
    let (_, after) = call(&r, Method::GET, "/state", None).await;
    assert_eq!(after["revision"], 3);
    assert_eq!(after["counts"]["classes"], 7);
    assert_eq!(f.app.snapshot().revision, 3);
}

#[tokio::test]
async fn rejections_leave_state_alone() {
    let f = fixture();
    let r = router(f.app.clone());
    detect_and_cluster(&r, &f.split).await;

    let stale = json!({
        "expected_revision": 1,
        "assignments": [{ "cluster_id": 0, "label": "x" }],
    });
    let (status, body) = call(&r, Method::POST, "/labels", Some(stale)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("revision"));

    let missing = json!({ "assignments": [{ "cluster_id": 999, "label": "x" }] });
    let (status, body) = call(&r, Method::POST, "/labels", Some(missing)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("999"));

    let (status, _) = call(&r, Method::GET, "/samples/no-such-sample", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = call(&r, Method::POST, "/labels", Some(json!({ "assignments": [], "bogus": 1 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("bogus"));
    assert_eq!(f.app.snapshot().revision, 2);
}

#[tokio::test]
async fn read_only_detect_and_sample_lookup() {
    let f = fixture();
    let r = router(f.app.clone());
    let samples: Vec<SampleRecord> = f.split.withheld.records[..5].to_vec();
    let (status, body) = call(&r, Method::POST, "/detect", Some(json!({ "samples": samples, "pool": false }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["revision"], 0);
    assert_eq!(body["decisions"].as_array().unwrap().len(), 5);
    assert_eq!(f.app.snapshot().revision, 0);

    let (status, body) = call(&r, Method::POST, "/cluster", Some(json!({}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");

    let id = &f.split.train_known.records[0].sample_id;
    let (status, body) = call(&r, Method::GET, &format!("/samples/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["sample_id"], id.as_str());
    assert_eq!(body["flagged"], false);
}
