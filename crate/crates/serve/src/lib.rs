//! HTTP teaching service.
//!
//! Endpoints (JSON unless noted):
//!
//! - `POST /api/session` `{modality, mode, seed}` creates a session
//! - `GET /api/session/{id}/step` returns the step awaiting feedback
//! - `POST /api/session/{id}/feedback` `{value}` rates it and advances
//! - `GET /api/session/{id}/export` returns the canonical feedback CSV
//! - `GET /api/session/{id}/metrics`
//!
//! Each session sits behind its own mutex; distinct sessions never contend.

pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use steady_core::env::{Env, Session};
use steady_core::feedback::Modality;
use steady_core::harness::{record_session, ExperimentConfig, HarnessError};
use steady_core::rng::derive_seed;

pub use session::{FeedbackAck, Metrics, Mode, SessionError, StepView, TeachSession};

const TAG_LIVE: u64 = 6;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{0}")]
    BadRequest(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ApiError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            ApiError::Session(SessionError::NoPendingStep) => (StatusCode::CONFLICT, "no_pending_step"),
            ApiError::Session(SessionError::Empty) => (StatusCode::CONFLICT, "empty_session"),
            ApiError::Session(SessionError::WrongModality(..)) => (StatusCode::UNPROCESSABLE_ENTITY, "wrong_modality"),
            ApiError::Session(SessionError::InvalidValue(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_value"),
            ApiError::Session(SessionError::Steady(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_value"),
            ApiError::Harness(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
        };
        let body = ErrorBody {
            error: kind,
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<Mutex<TeachSession>>;

pub struct AppState {
    config: ExperimentConfig,
    next_id: AtomicU64,
    sessions: RwLock<HashMap<String, Shared>>,
    scripts: Mutex<HashMap<u64, Arc<(Env, Session)>>>,
}

impl AppState {
    /// Replay scripts and live agents are built from `config`; a session's
    /// seed replaces its master seed.
    pub fn new(config: ExperimentConfig) -> Arc<Self> {
        Arc::new(Self {
            config,
            next_id: AtomicU64::new(1),
            sessions: RwLock::new(HashMap::new()),
            scripts: Mutex::new(HashMap::new()),
        })
    }

    fn session(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    fn script(&self, seed: u64) -> Result<Arc<(Env, Session)>, ApiError> {
        if let Some(s) = self.scripts.lock().expect("script cache poisoned").get(&seed) {
            return Ok(s.clone());
        }
        let config = ExperimentConfig {
            master_seed: seed,
            ..self.config.clone()
        };
        let (env, _, session) = record_session(&config)?;
        let entry = Arc::new((env, session));
        self.scripts
            .lock()
            .expect("script cache poisoned")
            .insert(seed, entry.clone());
        Ok(entry)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateRequest {
    pub modality: Modality,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub modality: Modality,
    pub mode: Mode,
    pub total: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub value: serde_json::Value,
}

async fn create(State(app): State<Arc<AppState>>, Json(req): Json<CreateRequest>) -> Result<Json<CreateResponse>, ApiError> {
    let id = app.next_id.fetch_add(1, Ordering::Relaxed).to_string();
    let worker = app.clone();
    let session_id = id.clone();
    let session = tokio::task::spawn_blocking(move || -> Result<TeachSession, ApiError> {
        Ok(match req.mode {
            Mode::Replay => {
                let script = worker.script(req.seed)?;
                TeachSession::replay(session_id, req.modality, script.0.clone(), &script.1)
            }
            Mode::Live => {
                let env = Env::new(worker.config.env.clone()).map_err(HarnessError::from)?;
                TeachSession::live(
                    session_id,
                    req.modality,
                    env,
                    worker.config.steady.clone(),
                    worker.config.alpha,
                    derive_seed(req.seed, TAG_LIVE),
                )
            }
        })
    })
    .await
    .map_err(|e| ApiError::BadRequest(e.to_string()))??;
    let resp = CreateResponse {
        session_id: id.clone(),
        modality: req.modality,
        mode: req.mode,
        total: session.total(),
    };
    app.sessions
        .write()
        .expect("session map poisoned")
        .insert(id, Arc::new(Mutex::new(session)));
    Ok(Json(resp))
}

async fn step(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<StepView>, ApiError> {
    let s = app.session(&id)?;
    let view = s.lock().expect("session poisoned").step_view();
    Ok(Json(view))
}

async fn feedback(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<FeedbackRequest>,
) -> Result<Json<FeedbackAck>, ApiError> {
    let s = app.session(&id)?;
    let ack = s.lock().expect("session poisoned").submit_json(req.value)?;
    Ok(Json(ack))
}

async fn export(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = app.session(&id)?;
    let csv = s.lock().expect("session poisoned").export_csv()?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

async fn metrics(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Metrics>, ApiError> {
    let s = app.session(&id)?;
    let m = s.lock().expect("session poisoned").metrics();
    Ok(Json(m))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/session", post(create))
        .route("/api/session/{id}/step", get(step))
        .route("/api/session/{id}/feedback", post(feedback))
        .route("/api/session/{id}/export", get(export))
        .route("/api/session/{id}/metrics", get(metrics))
        .with_state(state)
}

pub async fn serve(config: ExperimentConfig, port: u16) -> std::io::Result<()> {
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(config))).await
}
