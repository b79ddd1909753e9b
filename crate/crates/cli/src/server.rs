//! HTTP session API over the interactive planning loop.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pdplan_core::agent::{
    ActionGenerator, DoneReason, PlanSession, SelectedBy, SelectionPolicy, SessionStatus,
    StepOutcome,
};
use pdplan_core::conformal::CalibrationResult;
use pdplan_core::estimator::{Estimator, ScoredAction};
use pdplan_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);

/// Everything a session needs that is loaded once at startup.
pub struct Model {
    pub estimator: Estimator,
    pub calibration: Option<CalibrationResult>,
    pub threshold: f64,
    pub checkpoint: String,
    pub generator: Box<dyn ActionGenerator>,
    pub generator_mode: String,
    pub max_steps: usize,
}

struct Entry {
    session: PlanSession,
    /// Actions auto-selected by the most recent mutation.
    auto_selected: Vec<ScoredAction>,
    created_ms: u64,
    updated_ms: u64,
    touched: Instant,
}

pub struct AppState {
    model: Option<Arc<Model>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Entry>>>>,
    ttl: Duration,
}

impl AppState {
    pub fn new(model: Option<Model>, ttl: Duration) -> Arc<Self> {
        Arc::new(AppState {
            model: model.map(Arc::new),
            sessions: Mutex::new(HashMap::new()),
            ttl,
        })
    }

    fn evict_expired(&self) {
        let mut map = self.sessions.lock().expect("session map poisoned");
        let ttl = self.ttl;
        map.retain(|_, e| e.lock().map(|e| e.touched.elapsed() < ttl).unwrap_or(false));
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>, ApiError> {
        self.evict_expired();
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| {
                ApiError::new(
                    StatusCode::NOT_FOUND,
                    "not_found",
                    format!("no session {id}"),
                )
            })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::State(_) => (StatusCode::CONFLICT, "invalid_state"),
            Error::Range { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "bad_index"),
            Error::Config(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            Error::Generator(_) => (StatusCode::BAD_GATEWAY, "generator_failure"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": { "code": self.code, "message": self.message } })),
        )
            .into_response()
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub index: usize,
    pub device: String,
    pub setting: String,
    pub epd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedView {
    pub device: String,
    pub setting: String,
    pub epd: f64,
    pub selected_by: SelectedBy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub status: SessionStatus,
    pub prompt: String,
    /// `None` for a non-finite threshold.
    pub threshold: Option<f64>,
    pub step_count: usize,
    pub max_steps: usize,
    pub done_reason: Option<DoneReason>,
    pub executed: Vec<ExecutedView>,
    pub pending: Vec<CandidateView>,
    pub auto_selected: Vec<CandidateView>,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

fn candidate(index: usize, s: &ScoredAction) -> CandidateView {
    CandidateView {
        index,
        device: s.action.device.clone(),
        setting: s.action.setting.clone(),
        epd: round6(s.epd),
    }
}

fn view(e: &Entry) -> SessionView {
    let s = &e.session;
    let executed = s
        .trace
        .iter()
        .filter_map(|r| r.selected.as_ref())
        .map(|sel| ExecutedView {
            device: sel.action.action.device.clone(),
            setting: sel.action.action.setting.clone(),
            epd: round6(sel.action.epd),
            selected_by: sel.by,
        })
        .collect();
    SessionView {
        id: s.id.clone(),
        status: s.status,
        prompt: s.context.prompt.clone(),
        threshold: s.threshold.is_finite().then(|| round6(s.threshold)),
        step_count: s.step_count,
        max_steps: s.max_steps,
        done_reason: s.done_reason,
        executed,
        pending: s
            .pending
            .iter()
            .enumerate()
            .map(|(i, p)| candidate(i, p))
            .collect(),
        auto_selected: e
            .auto_selected
            .iter()
            .enumerate()
            .map(|(i, p)| candidate(i, p))
            .collect(),
        created_at_ms: e.created_ms,
        updated_at_ms: e.updated_ms,
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Steps until the session needs the user or finishes.
fn advance(model: &Model, entry: &mut Entry) -> Result<(), Error> {
    entry.auto_selected.clear();
    while entry.session.status == SessionStatus::Running {
        let out = entry.session.step(
            &model.estimator,
            model.generator.as_ref(),
            &SelectionPolicy::Interactive,
        )?;
        if let StepOutcome::AutoSelected(a) = out {
            entry.auto_selected.push(a);
        }
    }
    Ok(())
}

fn model(state: &AppState) -> Result<Arc<Model>, ApiError> {
    state.model.clone().ok_or_else(|| {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "not_ready",
            "model not loaded",
        )
    })
}

/// Runs blocking session work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Deserialize)]
pub struct CreateBody {
    #[serde(default)]
    pub prompt: String,
}

async fn create(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateBody>,
) -> Result<Response, ApiError> {
    let model = model(&state)?;
    if body.prompt.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_request",
            "prompt is empty",
        ));
    }
    state.evict_expired();
    let state2 = Arc::clone(&state);
    let v = blocking(move || {
        let id = uuid::Uuid::new_v4().to_string();
        let mut session = PlanSession::new(id.clone(), model.threshold, model.max_steps)?;
        session.submit_prompt(&body.prompt)?;
        let t = now_ms();
        let mut entry = Entry {
            session,
            auto_selected: Vec::new(),
            created_ms: t,
            updated_ms: t,
            touched: Instant::now(),
        };
        advance(&model, &mut entry)?;
        let v = view(&entry);
        state2
            .sessions
            .lock()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(entry)));
        Ok(v)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(v)).into_response())
}

#[derive(Deserialize)]
pub struct SelectBody {
    pub index: usize,
}

async fn select(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<SelectBody>,
) -> Result<Json<SessionView>, ApiError> {
    let model = model(&state)?;
    let entry = state.entry(&id)?;
    blocking(move || {
        let mut e = entry.lock().expect("session poisoned");
        e.session.choose(body.index)?;
        e.updated_ms = now_ms();
        e.touched = Instant::now();
        advance(&model, &mut e)?;
        Ok(Json(view(&e)))
    })
    .await
}

async fn fetch(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let entry = state.entry(&id)?;
    let mut e = entry.lock().expect("session poisoned");
    e.touched = Instant::now();
    Ok(Json(view(&e)))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(match &state.model {
        None => json!({ "status": "not_ready" }),
        Some(m) => json!({
            "status": "ok",
            "checkpoint": m.checkpoint,
            "checkpoint_format_version": pdplan_core::estimator::params::CHECKPOINT_VERSION,
            "threshold": m.threshold.is_finite().then(|| round6(m.threshold)),
            "epsilon": m.calibration.map(|c| c.epsilon),
            "generator": m.generator_mode,
            "sessions": state.session_count(),
        }),
    })
}

/// Routes plus CORS. `cors_origin` of `None` allows any origin.
pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> anyhow::Result<Router> {
    let origin = match cors_origin {
        None | Some("*") => AllowOrigin::any(),
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o)?),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    Ok(Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", get(fetch))
        .route("/v1/sessions/{id}/select", post(select))
        .layer(cors)
        .with_state(state))
}
