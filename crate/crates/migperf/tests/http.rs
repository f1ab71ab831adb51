use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use migperf::catalog::resolve_catalog;
use migperf::engine::Engine;
use serde_json::{json, Value};
use tower::ServiceExt;

fn engine() -> Arc<Engine> {
    let catalog = resolve_catalog(Some(&Path::new(env!("CARGO_MANIFEST_DIR")).join("catalog/default.json"))).unwrap();
    Arc::new(Engine::in_memory(&catalog))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String, String) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ct = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, ct, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, ct, text) = call(app, method, uri, body).await;
    assert!(ct.starts_with("application/json"), "{uri}: {ct} {text}");
    (s, serde_json::from_str(&text).unwrap())
}

fn single_run(requests: u64) -> Value {
    json!({
        "device_id": 1,
        "profile": "2g.12gb",
        "spec": { "kind": "inference", "model": "resnet50", "batch_size": 8,
                  "total_requests": requests, "loop": "closed" }
    })
}

#[tokio::test]
async fn devices_and_partitions() {
    let app = migperf::http::router(engine());
    let (s, v) = call_json(&app, "GET", "/v1/devices", None).await;
    assert_eq!(s, 200);
    assert_eq!(v["devices"][1]["model_name"], "A30");

    let (s, v) = call_json(&app, "POST", "/v1/devices/0/partitions", Some(json!({ "target": ["4g.40gb", "3g.40gb"] }))).await;
    assert_eq!(s, 400);
    assert_eq!(v["code"], "infeasible");
    assert!(v["message"].as_str().unwrap().contains("infeasible"));

    let (s, v) = call_json(&app, "POST", "/v1/devices/0/partitions", Some(json!({ "target": "3g.40gb,3g.40gb" }))).await;
    assert_eq!(s, 200);
    assert_eq!(v["steps"].as_array().unwrap().len(), 2);

    let (s, v) = call_json(&app, "GET", "/v1/devices/0/instances", None).await;
    assert_eq!(s, 200);
    let starts: Vec<u64> = v["instances"].as_array().unwrap().iter().map(|r| r["start"].as_u64().unwrap()).collect();
    assert_eq!(starts, [0, 4]);

    let (s, v) = call_json(&app, "GET", "/v1/devices/9/instances", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));

    let (s, v) = call_json(&app, "POST", "/v1/devices/0/mig", Some(json!({ "enabled": true }))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("mode_conflict")));

    let (s, v) = call_json(&app, "POST", "/v1/devices/0/partitions", Some(json!({ "targets": [] }))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid")));

    let (s, v) = call_json(&app, "POST", "/v1/devices/0/partitions", None).await;
    assert_eq!(s, 400, "{v}");
}

#[tokio::test]
async fn benchmarks_run_asynchronously() {
    let eng = engine();
    let app = migperf::http::router(eng.clone());
    let (s, v) = call_json(&app, "POST", "/v1/benchmarks?mode=infer", Some(single_run(20_000))).await;
    assert_eq!(s, 200, "{v}");
    let run = v["run_ids"][0].as_str().unwrap().to_string();

    // queued jobs block partition changes
    let (s, v) = call_json(&app, "POST", "/v1/devices/1/instances", Some(json!({ "profile": "1g.6gb" }))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("busy")));

    let e = eng.clone();
    tokio::task::spawn_blocking(move || e.wait_idle()).await.unwrap();
    let (s, v) = call_json(&app, "GET", &format!("/v1/benchmarks/{run}"), None).await;
    assert_eq!(s, 200);
    assert_eq!(v["state"], "completed");
    let done = v.clone();
    assert!(v["summary"]["p99_latency_ms"].as_f64().unwrap() > 0.0);

    let (s, v) = call_json(&app, "GET", "/v1/benchmarks/run-99999", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));

    let (s, _, csv) = call(&app, "GET", &format!("/v1/export/csv?runs={run}"), None).await;
    assert_eq!(s, 200);
    assert_eq!(csv.lines().count(), 2);
    let row = &migperf::export::read_summaries_csv(&csv).unwrap()[0];
    let from_csv = serde_json::to_value(row.summary()).unwrap();
    assert_eq!(from_csv, done["summary"]);
    let (s, v) = call_json(&app, "GET", "/v1/export/csv?runs=run-77777", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));

    let (s, ct, body) = call(&app, "GET", "/metrics", None).await;
    assert_eq!(s, 200);
    assert!(ct.starts_with("text/plain"));
    assert_eq!(body.lines().filter(|l| !l.starts_with('#')).count(), 7);
}

#[tokio::test]
async fn invalid_benchmarks_are_rejected_up_front() {
    let app = migperf::http::router(engine());
    let mut bad = single_run(10);
    bad["spec"]["batch_size"] = json!(0);
    let (s, v) = call_json(&app, "POST", "/v1/benchmarks", Some(bad)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid")));

    let (s, v) = call_json(&app, "POST", "/v1/benchmarks?mode=train", Some(single_run(10))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid")));

    let compare = json!({ "device_id": 1, "replicas": 3, "spec": single_run(10)["spec"] });
    let (s, v) = call_json(&app, "POST", "/v1/benchmarks", Some(compare)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("infeasible")));

    let mut elsewhere = single_run(10);
    elsewhere["device_id"] = json!(5);
    let (s, _) = call_json(&app, "POST", "/v1/benchmarks", Some(elsewhere)).await;
    assert_eq!(s, 404);

    let (s, ct, _) = call(&app, "POST", "/v1/benchmarks", None).await;
    assert_eq!(s, 400);
    assert!(ct.starts_with("application/json"));
}

#[tokio::test]
async fn empty_system_exports_empty_metrics() {
    let app = migperf::http::router(engine());
    let (s, _, body) = call(&app, "GET", "/metrics", None).await;
    assert_eq!(s, 200);
    assert_eq!(body, "");
    let (s, v) = call_json(&app, "GET", "/v1/nowhere", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
}
