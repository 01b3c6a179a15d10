//! Review HTTP API.
//!
//! | route            | body                   | reply                          |
//! |------------------|------------------------|--------------------------------|
//! | `GET /api/graph` |                        | node-link graph                |
//! | `PUT /api/graph` | full node-link graph   | `{summary, delta}`             |
//! | `POST /api/approve` |                     | `{state, summary, delta}`      |
//!
//! Errors are `{"error": message}`. The server stops after a successful
//! approval.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tower_http::services::ServeDir;
use truster_core::knowledge_graph::{GraphDelta, NodeLinkGraph};
use truster_core::pipeline::Workspace;
use truster_core::review::ReviewSession;

pub struct ReviewState {
    workspace: Mutex<Workspace>,
    session: Mutex<ReviewSession>,
    approved: watch::Sender<Option<GraphDelta>>,
}

impl ReviewState {
    pub fn new(workspace: Workspace, session: ReviewSession) -> Arc<Self> {
        Arc::new(Self {
            workspace: Mutex::new(workspace),
            session: Mutex::new(session),
            approved: watch::channel(None).0,
        })
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn delta_body(delta: &GraphDelta) -> Value {
    json!({ "summary": delta.summary(), "delta": delta })
}

async fn get_graph(State(state): State<Arc<ReviewState>>) -> Json<NodeLinkGraph> {
    Json(state.session.lock().unwrap().graph())
}

async fn put_graph(
    State(state): State<Arc<ReviewState>>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let doc: NodeLinkGraph = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid graph JSON: {e}")))?;
    let mut session = state.session.lock().unwrap();
    let delta = session
        .put(&doc)
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    Ok(Json(delta_body(delta)))
}

async fn approve(State(state): State<Arc<ReviewState>>) -> Result<Json<Value>, ApiError> {
    let session = state.session.lock().unwrap().clone();
    let mut workspace = state.workspace.lock().unwrap();
    let delta = workspace
        .approve_review(&session)
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let mut body = delta_body(&delta);
    body["state"] = json!(workspace.state().state);
    state.approved.send_replace(Some(delta));
    Ok(Json(body))
}

pub fn router(state: Arc<ReviewState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/graph", get(get_graph).put(put_graph))
        .route("/api/approve", post(approve))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the graph is approved and returns the approved delta.
pub async fn serve(
    listener: TcpListener,
    state: Arc<ReviewState>,
    ui_dir: Option<PathBuf>,
) -> std::io::Result<GraphDelta> {
    let mut approved = state.approved.subscribe();
    let app = router(Arc::clone(&state), ui_dir);
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            let _ = approved.wait_for(Option::is_some).await;
        })
        .await?;
    let delta = state.approved.borrow().clone();
    Ok(delta.expect("shutdown only follows approval"))
}
