//! JSON-over-HTTP interface to the orchestrator.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::orchestrator::{Orchestrator, Session, TurnResult};

type SessionHandle = Arc<tokio::sync::Mutex<Session>>;

pub struct AppState {
    pub orchestrator: Arc<Orchestrator>,
    /// Shown by the health endpoint.
    pub checkpoint: String,
    /// Closed sessions are appended here as JSON lines, when set.
    pub transcripts: Option<PathBuf>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
}

impl AppState {
    pub fn new(orchestrator: Orchestrator, checkpoint: impl Into<String>) -> Self {
        Self {
            orchestrator: Arc::new(orchestrator),
            checkpoint: checkpoint.into(),
            transcripts: None,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    fn session(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.lock().expect("session map poisoned").get(id).cloned()
    }

    fn create(&self) -> String {
        let mut map = self.sessions.lock().expect("session map poisoned");
        loop {
            let id = format!("{:016x}", rand::random::<u64>());
            if !map.contains_key(&id) {
                map.insert(id.clone(), Arc::new(tokio::sync::Mutex::new(Session::new(id.clone()))));
                return id;
            }
        }
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

#[derive(Serialize)]
struct Created {
    id: String,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session).delete(close_session))
        .route("/api/sessions/{id}/messages", post(post_message))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "checkpoint": state.checkpoint,
        "kg_size": state.orchestrator.kg.len(),
    }))
}

async fn create_session(State(state): State<Arc<AppState>>) -> (StatusCode, Json<Created>) {
    let id = state.create();
    log::info!("session {id} created");
    (StatusCode::CREATED, Json(Created { id }))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Session>, ApiError> {
    let handle = state.session(&id).ok_or_else(|| not_found(&id))?;
    let snapshot = handle.lock().await.clone();
    Ok(Json(snapshot))
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TurnResult>, ApiError> {
    let handle = state.session(&id).ok_or_else(|| not_found(&id))?;
    let msg: MessageBody =
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))?;
    if msg.text.trim().is_empty() {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "text is empty".into()));
    }
    // The tokio mutex queues waiters in arrival order, which serializes
    // messages per session.
    let mut guard = handle.lock_owned().await;
    let orch = Arc::clone(&state.orchestrator);
    let result = tokio::task::spawn_blocking(move || orch.handle_message(&mut guard, &msg.text))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    result.map(Json).map_err(|e| {
        log::error!("session {id}: {e}");
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    })
}

async fn close_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let handle = state
        .sessions
        .lock()
        .expect("session map poisoned")
        .remove(&id)
        .ok_or_else(|| not_found(&id))?;
    let session = handle.lock().await.clone();
    if let Some(path) = &state.transcripts {
        append_transcript(path, &session).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    }
    log::info!("session {id} closed after {} turns", session.history.len());
    Ok(StatusCode::NO_CONTENT)
}

fn append_transcript(path: &std::path::Path, session: &Session) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(session)?)
}
