//! Session-based HTTP interface to the interactive loop.
//!
//! Sessions live in memory, each behind its own lock, and expire after a
//! period of inactivity. Live sessions have no target; demo sessions name one
//! so responses can report its rank.

mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

pub use session::{
    ConfirmRequest, CreateRequest, ImageView, SessionMode, SessionView, TopImage,
};

use crate::error::Result;
use crate::gallery::Dataset;
use crate::interaction::{build_joint_cooccurrence, JointCooccurrence, PolicySource, RetrievalEnv};
use crate::learning::{build_cooccurrence, training_split, CooccurrenceMatrix};
use crate::policy::PolicyModel;
use session::{Session, SessionLog};

/// Error body: `{code, message}` with an HTTP status.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), code: code.into(), message: message.into() }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// Where session candidates come from.
pub enum ServicePolicy {
    Learned { model: PolicyModel, cooccurrence: CooccurrenceMatrix },
    Random,
    QaSim,
    QaCohe(JointCooccurrence),
    /// Sessions cannot be created until a policy is configured.
    None,
}

impl ServicePolicy {
    /// Learned policy with co-occurrence counts from the gallery's training images.
    pub fn learned(model: PolicyModel, dataset: &Dataset) -> Result<Self> {
        model.check_compatible(dataset.feature_dim, dataset.vocab_size())?;
        let (train, _) = training_split(dataset)?;
        Ok(ServicePolicy::Learned { model, cooccurrence: build_cooccurrence(&train)? })
    }

    pub fn qacohe(dataset: &Dataset) -> Result<Self> {
        let (train, _) = training_split(dataset)?;
        Ok(ServicePolicy::QaCohe(build_joint_cooccurrence(&train)?))
    }

    pub fn source(&self) -> Option<PolicySource<'_>> {
        match self {
            ServicePolicy::Learned { model, cooccurrence } => {
                Some(PolicySource::Learned { model, cooccurrence: Some(cooccurrence) })
            }
            ServicePolicy::Random => Some(PolicySource::Random),
            ServicePolicy::QaSim => Some(PolicySource::QaSim),
            ServicePolicy::QaCohe(joint) => Some(PolicySource::QaCohe(joint)),
            ServicePolicy::None => None,
        }
    }

    fn name(&self) -> Option<&'static str> {
        self.source().map(|s| s.name())
    }
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub max_rounds: usize,
    pub default_candidates: usize,
    /// Images listed in each response.
    pub top_images: usize,
    pub session_ttl: Duration,
    /// Append-only JSONL record of every session event.
    pub session_log: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_rounds: 10,
            default_candidates: 10,
            top_images: 10,
            session_ttl: Duration::from_secs(30 * 60),
            session_log: None,
        }
    }
}

pub struct AppState {
    env: Arc<RetrievalEnv>,
    policy: ServicePolicy,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    log: Option<SessionLog>,
}

impl AppState {
    pub fn new(dataset: Dataset, policy: ServicePolicy, config: ServiceConfig) -> Result<Self> {
        let env = Arc::new(RetrievalEnv::new(dataset)?);
        let log = config.session_log.as_ref().map(|p| SessionLog::open(p)).transpose()?;
        Ok(AppState { env, policy, config, sessions: Mutex::new(HashMap::new()), log })
    }

    pub fn env(&self) -> &RetrievalEnv {
        &self.env
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session table poisoned").len()
    }

    pub fn create_session(&self, request: CreateRequest) -> std::result::Result<SessionView, ApiError> {
        let source = self
            .policy
            .source()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "PolicyNotLoaded", "no candidate policy is loaded"))?;
        let id = uuid::Uuid::new_v4().to_string();
        let session = Session::create(id.clone(), self.env.clone(), &source, &self.config, request)?;
        let view = session.view(&self.config);
        if let Some(log) = &self.log {
            log.record("create", &view);
        }
        self.sessions
            .lock()
            .expect("session table poisoned")
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    fn session(&self, id: &str) -> std::result::Result<Arc<Mutex<Session>>, ApiError> {
        let mut table = self.sessions.lock().expect("session table poisoned");
        let expired = table
            .get(id)
            .is_some_and(|s| s.lock().expect("session poisoned").idle() > self.config.session_ttl);
        if expired {
            table.remove(id);
        }
        table
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("SessionNotFound", format!("no session {id}")))
    }

    pub fn confirm(&self, id: &str, request: ConfirmRequest) -> std::result::Result<SessionView, ApiError> {
        let source = self
            .policy
            .source()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "PolicyNotLoaded", "no candidate policy is loaded"))?;
        let session = self.session(id)?;
        let mut session = session.lock().expect("session poisoned");
        session.confirm(&source, &self.config, request)?;
        let view = session.view(&self.config);
        if let Some(log) = &self.log {
            log.record("confirm", &view);
        }
        Ok(view)
    }

    pub fn get_session(&self, id: &str) -> std::result::Result<SessionView, ApiError> {
        let session = self.session(id)?;
        let view = session.lock().expect("session poisoned").view(&self.config);
        Ok(view)
    }

    pub fn delete_session(&self, id: &str) -> std::result::Result<(), ApiError> {
        let removed = self.sessions.lock().expect("session table poisoned").remove(id);
        match removed {
            Some(session) => {
                if let Some(log) = &self.log {
                    log.record("delete", &session.lock().expect("session poisoned").view(&self.config));
                }
                Ok(())
            }
            None => Err(ApiError::not_found("SessionNotFound", format!("no session {id}"))),
        }
    }

    pub fn image(&self, id: &str) -> std::result::Result<ImageView, ApiError> {
        let pos = self
            .env
            .dataset()
            .image_position(id)
            .ok_or_else(|| ApiError::not_found("ImageNotFound", format!("no image {id}")))?;
        Ok(ImageView::new(&self.env, pos))
    }

    /// Drops sessions idle for longer than the TTL; returns how many.
    pub fn evict_expired(&self) -> usize {
        let mut table = self.sessions.lock().expect("session table poisoned");
        let before = table.len();
        table.retain(|_, s| s.lock().expect("session poisoned").idle() <= self.config.session_ttl);
        before - table.len()
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    images: usize,
    vocab: usize,
    policy: Option<&'static str>,
    sessions: usize,
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("BadRequest", e.to_string()))
}

async fn create_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let result = parse_body(&body).and_then(|req| state.create_session(req));
    match result {
        Ok(view) => (StatusCode::CREATED, Json(view)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn confirm_handler(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    match parse_body(&body).and_then(|req| state.confirm(&id, req)) {
        Ok(view) => Json(view).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_handler(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.get_session(&id) {
        Ok(view) => Json(view).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn delete_handler(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.delete_session(&id) {
        Ok(()) => Json(serde_json::json!({ "deleted": id })).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn image_handler(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.image(&id) {
        Ok(view) => Json(view).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn health_handler(State(state): State<Arc<AppState>>) -> Response {
    Json(Health {
        status: "ok",
        images: state.env.num_images(),
        vocab: state.env.vocab_size(),
        policy: state.policy.name(),
        sessions: state.session_count(),
    })
    .into_response()
}

async fn fallback() -> Response {
    ApiError::not_found("NotFound", "no such route").into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_handler))
        .route("/api/sessions/{id}", get(get_handler).delete(delete_handler))
        .route("/api/sessions/{id}/confirm", post(confirm_handler))
        .route("/api/gallery/images/{id}", get(image_handler))
        .route("/api/health", get(health_handler))
        .fallback(fallback)
        .with_state(state)
}

/// Serves until Ctrl-C, sweeping expired sessions once a minute.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let sweeper = {
        let state = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            loop {
                tick.tick().await;
                let n = state.evict_expired();
                if n > 0 {
                    tracing::info!(evicted = n, "expired sessions dropped");
                }
            }
        })
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    sweeper.abort();
    result
}
