use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use steady_core::feedback::{read_csv, FeedbackValue, Modality};
use steady_core::harness::{ingest_partial_log, ExperimentConfig};
use steady_core::steady::SteadyState;
use steady_serve::{router, AppState};

fn app() -> Router {
    router(AppState::new(ExperimentConfig::default()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn create(app: &Router, modality: &str, mode: &str, seed: u64) -> String {
    let (s, v) = call_json(app, "POST", "/api/session", Some(json!({"modality": modality, "mode": mode, "seed": seed}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

async fn rate(app: &Router, id: &str, value: Value) -> (StatusCode, Value) {
    call_json(app, "POST", &format!("/api/session/{id}/feedback"), Some(json!({ "value": value }))).await
}

#[tokio::test]
async fn replay_session_runs_200_steps() {
    let app = app();
    let id = create(&app, "binary", "replay", 0).await;
    let step_uri = format!("/api/session/{id}/step");
    let (_, first) = call_json(&app, "GET", &step_uri, None).await;
    let (_, again) = call_json(&app, "GET", &step_uri, None).await;
    assert_eq!(first, again);
    assert_eq!(first["index"], 0);
    assert_eq!(first["total"], 200);
    assert_eq!(first["done"], false);
    assert!(first["histograms"].is_null());

    for i in 0..200 {
        let (s, ack) = rate(&app, &id, json!(if i % 3 == 0 { "bad" } else { "good" })).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(ack["index"], i + 1);
        assert!(ack["signal"].is_null());
    }
    let (_, last) = call_json(&app, "GET", &step_uri, None).await;
    assert_eq!(last["done"], true);
    assert!(last["step"].is_null());
    let (s, err) = rate(&app, &id, json!("good")).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(err["error"], "no_pending_step");

    let (_, csv) = call(&app, "GET", &format!("/api/session/{id}/export"), None).await;
    let logs = read_csv(csv.as_slice(), true).unwrap();
    assert_eq!(logs.len(), 1);
    assert_eq!(logs[0].events.len(), 200);
    assert_eq!(logs[0].events[0].value, FeedbackValue::Bad);
    // Second session repeats the first clip for clip.
    assert_eq!(logs[0].events[7].transition_id, logs[0].events[107].transition_id);
}

#[tokio::test]
async fn replay_script_is_the_recorded_session() {
    let app = app();
    let id = create(&app, "scalar", "replay", 0).await;
    let (_, v) = call_json(&app, "GET", &format!("/api/session/{id}/step"), None).await;
    let start = ExperimentConfig::default().env.start_pose;
    assert_eq!(v["step"]["before"], json!({"x": start.x, "y": start.y, "z": start.z}));
    assert_eq!(v["step"]["transition_id"], 0);
}

#[tokio::test]
async fn ids_are_distinct() {
    let app = app();
    let a = create(&app, "scalar", "live", 1).await;
    let b = create(&app, "scalar", "live", 1).await;
    assert_ne!(a, b);
}

#[tokio::test]
async fn feedback_errors() {
    let app = app();
    let id = create(&app, "scalar", "live", 0).await;
    let (s, e) = rate(&app, &id, json!(11)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["error"], "invalid_value");
    let (s, e) = rate(&app, &id, json!("good")).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["error"], "wrong_modality");
    let (_, v) = call_json(&app, "GET", &format!("/api/session/{id}/step"), None).await;
    assert_eq!(v["index"], 0);

    let (s, e) = call_json(&app, "GET", "/api/session/999/step", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(e["error"], "unknown_session");
    let (s, _) = call(&app, "GET", "/api/session/999/export", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, e) = call_json(&app, "GET", &format!("/api/session/{id}/export"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(e["error"], "empty_session");
    let (s, _) = call(&app, "POST", "/api/session", Some(json!({"modality": "ternary", "mode": "live"}))).await;
    assert!(s.is_client_error());
}

#[tokio::test]
async fn live_rewards_match_offline_filter() {
    let app = app();
    let id = create(&app, "scalar", "live", 4).await;
    let values: Vec<u8> = (0..60u32).map(|i| ((i * 7 + i / 5) % 11) as u8).collect();
    let mut live = Vec::new();
    for &v in &values {
        let (s, ack) = rate(&app, &id, json!(v)).await;
        assert_eq!(s, StatusCode::OK);
        let shaped = ack["labeled"]["shaped_reward"].as_f64().unwrap();
        assert_eq!(ack["signal"].as_f64().unwrap().to_bits(), shaped.to_bits());
        live.push(shaped);
    }
    let mut offline = SteadyState::default();
    let expected: Vec<f64> = values.iter().map(|&v| offline.process(f64::from(v)).unwrap().shaped_reward).collect();
    let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&live), bits(&expected));

    let (_, view) = call_json(&app, "GET", &format!("/api/session/{id}/step"), None).await;
    let h = &view["histograms"];
    assert_eq!(h["initialized"], true);
    assert_eq!(h["processed"], 60);
    let counts = |k: &str| h[k].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum::<u64>();
    assert_eq!(counts("positive") as usize, offline.positive().len());
    assert_eq!(counts("negative") as usize, offline.negative().len());

    let (_, m) = call_json(&app, "GET", &format!("/api/session/{id}/metrics"), None).await;
    assert_eq!(m["events"], 60);
    assert_eq!(m["last"]["shaped_reward"].as_f64().unwrap().to_bits(), expected[59].to_bits());
}

#[tokio::test]
async fn twenty_step_live_export_reingests() {
    let app = app();
    let id = create(&app, "scalar", "live", 2).await;
    for i in 0..20u8 {
        let (s, _) = rate(&app, &id, json!(i % 11)).await;
        assert_eq!(s, StatusCode::OK);
    }
    let (s, csv) = call(&app, "GET", &format!("/api/session/{id}/export"), None).await;
    assert_eq!(s, StatusCode::OK);
    let dir = std::env::temp_dir().join(format!("steady-serve-export-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("session.csv");
    std::fs::write(&path, &csv).unwrap();
    let logs = ingest_partial_log(&path).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(logs.len(), 1);
    assert_eq!(logs[0].modality, Modality::Scalar);
    let values: Vec<FeedbackValue> = logs[0].events.iter().map(|e| e.value).collect();
    let sent: Vec<FeedbackValue> = (0..20u8).map(|i| FeedbackValue::Scalar(i % 11)).collect();
    assert_eq!(values, sent);
}

#[tokio::test]
async fn sessions_run_concurrently() {
    let state = AppState::new(ExperimentConfig::default());
    let app = router(Arc::clone(&state));
    let a = create(&app, "binary", "live", 1).await;
    let b = create(&app, "binary", "live", 1).await;
    let jobs: Vec<_> = [a.clone(), b.clone()]
        .into_iter()
        .map(|id| {
            let app = app.clone();
            tokio::spawn(async move {
                for _ in 0..30 {
                    let (s, _) = rate(&app, &id, json!("good")).await;
                    assert_eq!(s, StatusCode::OK);
                }
            })
        })
        .collect();
    for j in jobs {
        j.await.unwrap();
    }
    let (_, ma) = call_json(&app, "GET", &format!("/api/session/{a}/metrics"), None).await;
    let (_, mb) = call_json(&app, "GET", &format!("/api/session/{b}/metrics"), None).await;
    assert_eq!(ma["cursor"], 30);
    assert_eq!(mb["cursor"], 30);
}
