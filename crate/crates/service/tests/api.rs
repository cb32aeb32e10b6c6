mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pkchat_service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(state: AppState) -> Router {
    router(Arc::new(state))
}

fn app() -> Router {
    app_with(AppState::new(common::tiny_orchestrator(0.5), "tiny.ckpt"))
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router) -> String {
    let (status, v) = send(app, "POST", "/api/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    v["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn health_reports_store_size() {
    let (status, v) = send(&app(), "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok", "checkpoint": "tiny.ckpt", "kg_size": 3}));
}

#[tokio::test]
async fn two_creates_give_distinct_ids() {
    let app = app();
    assert_ne!(create(&app).await, create(&app).await);
}

#[tokio::test]
async fn message_round_trip() {
    let app = app();
    let id = create(&app).await;
    let body = json!({"text": "what is the formed_by of basalt ?"}).to_string();
    let (status, v) = send(&app, "POST", &format!("/api/sessions/{id}/messages"), Some(&body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["entity"], "basalt");
    assert_eq!(v["topic_switched"], true);
    assert!(v["ts_score"].is_number());
    assert_eq!(v["knowledge"].as_array().unwrap().len(), 2);
    for t in v["tokens"].as_array().unwrap() {
        let src = t["source"].as_str().unwrap();
        assert!(src == "vocab" || src == "copy");
        assert_eq!(t["copy_index"].is_null(), src == "vocab");
        assert!(t["text"].is_string());
    }
    assert!(v["response"].is_string());
}

#[tokio::test]
async fn snapshot_counts_turns_and_is_stable() {
    let app = app();
    let id = create(&app).await;
    for text in ["tell me about basalt", "what about granite", "hello"] {
        let body = json!({ "text": text }).to_string();
        let (status, _) = send(&app, "POST", &format!("/api/sessions/{id}/messages"), Some(&body)).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, a) = send(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(a["history"].as_array().unwrap().len(), 6);
    assert_eq!(a["id"], id);
    let (_, b) = send(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    let (status, v) = send(&app, "GET", "/api/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());
    let (status, _) = send(&app, "POST", "/api/sessions/nope/messages", Some(r#"{"text":"hi"}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let id = create(&app).await;
    let uri = format!("/api/sessions/{id}/messages");
    assert_eq!(send(&app, "POST", &uri, Some("{not json")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, "POST", &uri, Some(r#"{"txt":"hi"}"#)).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, "POST", &uri, Some(r#"{"text":""}"#)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(send(&app, "POST", &uri, Some(r#"{"text":"   "}"#)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, snap) = send(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert!(snap["history"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn close_writes_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transcripts.jsonl");
    let mut state = AppState::new(common::tiny_orchestrator(0.5), "tiny.ckpt");
    state.transcripts = Some(path.clone());
    let app = app_with(state);
    let id = create(&app).await;
    let body = json!({"text": "tell me about basalt"}).to_string();
    send(&app, "POST", &format!("/api/sessions/{id}/messages"), Some(&body)).await;
    let (status, _) = send(&app, "DELETE", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(send(&app, "GET", &format!("/api/sessions/{id}"), None).await.0, StatusCode::NOT_FOUND);
    let line: Value = serde_json::from_str(std::fs::read_to_string(&path).unwrap().trim()).unwrap();
    assert_eq!(line["id"], id);
    assert_eq!(line["history"].as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_messages_to_one_session_are_serialized() {
    let app = app();
    let id = create(&app).await;
    let uri = format!("/api/sessions/{id}/messages");
    let mut handles = Vec::new();
    for text in ["tell me about basalt", "hello", "what about granite", "hello again"] {
        let (app, uri) = (app.clone(), uri.clone());
        let body = json!({ "text": text }).to_string();
        handles.push(tokio::spawn(async move { send(&app, "POST", &uri, Some(&body)).await.0 }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::OK);
    }
    let (_, snap) = send(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    let hist = snap["history"].as_array().unwrap();
    assert_eq!(hist.len(), 8);
    for (i, u) in hist.iter().enumerate() {
        assert_eq!(u["role"], if i % 2 == 0 { "user" } else { "bot" });
    }
}
