//! HTTP session service.
//!
//! Each session lives behind its own lock, so requests for one session are
//! serialized while different sessions proceed independently. Nothing is
//! shared between sessions except the read-only bank, and nothing is shared
//! between processes except the per-session event logs on disk.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use banditcat::irt::ThetaGrid;
use banditcat::rng::derive_seed;
use banditcat::session::PendingItem;
use banditcat::{Blueprint, Error, ItemBank, SessionConfig, SessionState};
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bank: Arc<ItemBank>,
    pub blueprint: Blueprint,
    pub session: SessionConfig,
    /// Master seed for sessions created without an explicit seed.
    pub seed: u64,
    /// Where per-session JSONL event logs go; `None` disables logging.
    pub event_dir: Option<PathBuf>,
}

struct Live {
    state: SessionState,
    logged: usize,
}

struct Inner {
    cfg: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Live>>>>,
    next_id: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Result<Self, Error> {
        cfg.blueprint.validate(&cfg.bank)?;
        cfg.session.selector.validate()?;
        if let Some(dir) = &cfg.event_dir {
            std::fs::create_dir_all(dir).map_err(Error::from)?;
        }
        Ok(Self(Arc::new(Inner {
            cfg,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Live>>, ApiError> {
        self.0
            .sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }

    /// Appends events not yet written to the session's log file.
    fn flush_events(&self, live: &mut Live) {
        let Some(dir) = &self.0.cfg.event_dir else {
            return;
        };
        let events = &live.state.events()[live.logged..];
        if events.is_empty() {
            return;
        }
        let path = dir.join(format!("{}.jsonl", live.state.session_id()));
        let result = OpenOptions::new().create(true).append(true).open(&path).and_then(|mut f| {
            let mut buf = Vec::new();
            for ev in events {
                serde_json::to_writer(&mut buf, ev).map_err(std::io::Error::other)?;
                buf.push(b'\n');
            }
            f.write_all(&buf)
        });
        match result {
            Ok(()) => live.logged = live.state.events().len(),
            Err(e) => warn!("event log {}: {e}", path.display()),
        }
    }
}

fn now_ms() -> Option<u64> {
    SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_millis() as u64)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownItem(_) => StatusCode::NOT_FOUND,
            Error::UnexpectedItem { .. } | Error::DuplicateItem(_) => StatusCode::CONFLICT,
            Error::SessionFinished => StatusCode::GONE,
            Error::StageIncomplete(_) => StatusCode::CONFLICT,
            Error::Malformed(_) | Error::InvalidConfig(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateRequest {
    pub session_id: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub seed: u64,
    pub item: PendingItem,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextResponse {
    pub session_id: String,
    pub item: PendingItem,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeRequest {
    pub item_id: String,
    pub correct: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorView {
    pub grid: ThetaGrid,
    pub mass: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradeResponse {
    pub session_id: String,
    pub item_id: String,
    pub stage: usize,
    pub item_type: String,
    pub posterior_mean: f64,
    pub posterior_variance: f64,
    pub stage_complete: bool,
    pub finished: bool,
    pub posterior: PosteriorView,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageScore {
    pub item_type: String,
    pub complete: bool,
    pub administered: usize,
    pub count: usize,
    /// Posterior mean; present once the stage is complete.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub session_id: String,
    pub finished: bool,
    pub scores: std::collections::BTreeMap<String, f64>,
    pub stages: Vec<StageScore>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemView {
    pub item_id: String,
    pub item_type: String,
    pub tags: Vec<String>,
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid body: {e}")))
}

async fn create(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<CreateResponse>)> {
    let req: CreateRequest = parse_body(&body)?;
    let inner = &app.0;
    let session_id = match req.session_id {
        Some(id) if valid_session_id(&id) => id,
        Some(id) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("session id {id:?} must be 1-64 characters of [A-Za-z0-9_-]"),
            ))
        }
        None => format!("s-{:08}", inner.next_id.fetch_add(1, Ordering::Relaxed)),
    };
    let seed = req
        .seed
        .unwrap_or_else(|| derive_seed(inner.cfg.seed, &format!("session:{session_id}"), 0));
    let cfg = &inner.cfg;
    let ts = now_ms();
    let mut state = SessionState::start(session_id.clone(), &cfg.blueprint, &cfg.bank, &cfg.session, seed, ts)?;
    let item = state.next_item(&cfg.bank, ts)?;
    let live = Arc::new(Mutex::new(Live { state, logged: 0 }));
    {
        let mut table = inner.sessions.lock().expect("session table lock");
        if table.contains_key(&session_id) {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("session {session_id} already exists")));
        }
        table.insert(session_id.clone(), live.clone());
    }
    app.flush_events(&mut live.lock().expect("session lock"));
    debug!("created session {session_id} with seed {seed}");
    Ok((StatusCode::CREATED, Json(CreateResponse { session_id, seed, item })))
}

async fn next(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<NextResponse>> {
    let live = app.session(&id)?;
    let mut live = live.lock().expect("session lock");
    let item = live.state.next_item(&app.0.cfg.bank, now_ms())?;
    app.flush_events(&mut live);
    Ok(Json(NextResponse { session_id: id, item }))
}

async fn grade(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<GradeResponse>> {
    let req: GradeRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid body: {e}")))?;
    let live = app.session(&id)?;
    let mut live = live.lock().expect("session lock");
    let out = live.state.submit_grade(&app.0.cfg.bank, &req.item_id, req.correct, now_ms())?;
    app.flush_events(&mut live);
    let post = live.state.posterior(out.stage).expect("graded stage exists");
    Ok(Json(GradeResponse {
        session_id: id,
        item_id: req.item_id,
        stage: out.stage,
        item_type: app.0.cfg.blueprint.stages[out.stage].item_type.clone(),
        posterior_mean: out.posterior_mean,
        posterior_variance: out.posterior_variance,
        stage_complete: out.stage_complete,
        finished: out.finished,
        posterior: PosteriorView {
            grid: *post.grid(),
            mass: post.mass().to_vec(),
        },
    }))
}

async fn score(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ScoreResponse>> {
    let live = app.session(&id)?;
    let live = live.lock().expect("session lock");
    let st = &live.state;
    let stages = st
        .blueprint()
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let score = st.stage_score(i).ok();
            StageScore {
                item_type: s.item_type.clone(),
                complete: score.is_some(),
                administered: st.administered().iter().filter(|a| a.stage == i).count(),
                count: s.count,
                score,
            }
        })
        .collect();
    Ok(Json(ScoreResponse {
        session_id: id,
        finished: st.is_finished(),
        scores: st.completed_scores(),
        stages,
    }))
}

async fn item(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ItemView>> {
    let it = app
        .0
        .cfg
        .bank
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown item {id}")))?;
    Ok(Json(ItemView {
        item_id: it.item_id.clone(),
        item_type: it.item_type.clone(),
        tags: it.tags.iter().cloned().collect(),
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/grade", post(grade))
        .route("/sessions/{id}/score", get(score))
        .route("/items/{id}", get(item))
        .with_state(state)
}

/// Serves until the process receives Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
