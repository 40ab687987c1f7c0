//! JSON-over-HTTP service.
//!
//! Reads clone the current snapshot under a short read lock and score
//! outside it. Mutations take the write lock, so they are serialized, and
//! persist the registry before releasing it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, PoisonError, RwLock, RwLockReadGuard};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use macro_router_core::executor::{HttpTransport, Simulator, Transport};
use macro_router_core::pipeline::{
    Engine, FeedbackSource, HandleOutcome, PipelineConfig, RouteOutcome, Snapshot, TrainingSession, TrainingState,
};
use macro_router_core::registry::{FeedbackStats, MacroId, MacroRecord, NewMacro, Outcome, Registry};
use serde::{Deserialize, Serialize};

use crate::error::{parse_body, ApiError};

pub const DEFAULT_PROPOSALS: usize = 3;

/// Load the registry named by the config. A missing file is an empty
/// registry; it is created on the first mutation.
pub fn load_registry(path: &Path) -> Result<Registry, ApiError> {
    if path.exists() {
        Ok(Registry::load(path)?)
    } else {
        Ok(Registry::new())
    }
}

/// The simulator when the config names one, live HTTP otherwise.
pub fn transport_for(config: &PipelineConfig) -> Result<Arc<dyn Transport>, ApiError> {
    match &config.simulator {
        Some(path) => {
            Ok(Arc::new(Simulator::load(path).map_err(|e| {
                ApiError::bad_request(format!("{}: {e}", path.display()))
            })?))
        }
        None => Ok(Arc::new(HttpTransport::default())),
    }
}

pub struct AppState {
    engine: RwLock<Engine>,
    registry_path: Option<PathBuf>,
    transport: Arc<dyn Transport>,
    sessions: Mutex<BTreeMap<u64, TrainingSession>>,
    next_session: AtomicU64,
}

impl AppState {
    /// `registry_path: None` keeps the registry in memory only.
    pub fn new(engine: Engine, registry_path: Option<PathBuf>, transport: Arc<dyn Transport>) -> Self {
        Self {
            engine: RwLock::new(engine),
            registry_path,
            transport,
            sessions: Mutex::new(BTreeMap::new()),
            next_session: AtomicU64::new(1),
        }
    }

    pub fn from_config(config: PipelineConfig) -> Result<Self, ApiError> {
        let registry = load_registry(&config.registry_path)?;
        let transport = transport_for(&config)?;
        let path = config.registry_path.clone();
        let engine = Engine::new(registry, config)?;
        Ok(Self::new(engine, Some(path), transport))
    }

    pub fn engine(&self) -> RwLockReadGuard<'_, Engine> {
        self.engine.read().unwrap_or_else(PoisonError::into_inner)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.engine().snapshot()
    }

    fn mutate<T>(&self, f: impl FnOnce(&mut Engine) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut engine = self.engine.write().unwrap_or_else(PoisonError::into_inner);
        let out = f(&mut engine)?;
        if let Some(path) = &self.registry_path {
            engine.registry().save(path)?;
        }
        Ok(out)
    }
}

pub type SharedState = Arc<AppState>;

pub fn router(state: SharedState, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/macros", get(list_macros).post(add_macro))
        .route("/macros/{id}", delete(remove_macro))
        .route("/route", post(route))
        .route("/execute", post(execute))
        .route("/feedback", post(feedback))
        .route("/train/propose", post(train_propose))
        .route("/train/commit", post(train_commit))
        .route("/stats", get(stats))
        .fallback(|| async { ApiError::not_found("no such endpoint") });
    if let Some(dir) = ui_dir {
        let dir = Arc::new(dir);
        let root = {
            let dir = Arc::clone(&dir);
            move || static_file(dir, String::new())
        };
        app = app.route("/ui", get(root.clone())).route("/ui/", get(root)).route(
            "/ui/{*path}",
            get(move |UrlPath(p): UrlPath<String>| static_file(dir, p)),
        );
    }
    app.with_state(state)
}

/// Files under the console build directory; `index.html` for the root.
async fn static_file(dir: Arc<PathBuf>, rel: String) -> Result<impl IntoResponse, ApiError> {
    let rel = if rel.is_empty() { "index.html".to_string() } else { rel };
    let rel_path = Path::new(&rel);
    if !rel_path
        .components()
        .all(|c| matches!(c, std::path::Component::Normal(_)))
    {
        return Err(ApiError::not_found(format!("no asset `{rel}`")));
    }
    let bytes = tokio::fs::read(dir.join(rel_path))
        .await
        .map_err(|_| ApiError::not_found(format!("no asset `{rel}`")))?;
    let mime = match rel_path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json" | "map") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        Some("woff2") => "font/woff2",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteRequest {
    pub utterance: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecuteRequest {
    pub utterance: String,
    #[serde(default)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub macro_id: MacroId,
    pub outcome: Outcome,
    /// Defaults to `user`.
    #[serde(default)]
    pub source: Option<FeedbackSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub macro_id: MacroId,
    pub stats: FeedbackStats,
    pub smoothed_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposeRequest {
    pub description: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub rank: usize,
    pub id: MacroId,
    pub macro_name: String,
    pub use_case: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposeResponse {
    pub session_id: u64,
    pub state: TrainingState,
    pub proposals: Vec<Proposal>,
}

/// A draft macro, optionally tied to a session opened by `/train/propose`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommitRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<u64>,
    #[serde(flatten)]
    pub draft: NewMacro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitResponse {
    pub id: MacroId,
    pub macro_name: String,
    pub session_id: Option<u64>,
    pub state: TrainingState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroStats {
    pub id: MacroId,
    pub macro_name: String,
    pub successes: u64,
    pub attempts: u64,
    pub smoothed_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub macros: Vec<MacroStats>,
    pub config: PipelineConfig,
}

pub fn proposals(snapshot: &Snapshot, session: &TrainingSession) -> Vec<Proposal> {
    session
        .proposals
        .iter()
        .filter_map(|p| {
            let rec = snapshot.record(p.id)?;
            Some(Proposal {
                rank: p.rank,
                id: p.id,
                macro_name: rec.macro_name.clone(),
                use_case: rec.use_case.clone(),
                score: p.score,
            })
        })
        .collect()
}

async fn list_macros(State(s): State<SharedState>) -> Json<Vec<MacroRecord>> {
    Json(s.engine().registry().macros().to_vec())
}

async fn add_macro(State(s): State<SharedState>, body: Bytes) -> Result<(StatusCode, Json<MacroRecord>), ApiError> {
    let draft: NewMacro = parse_body(&body)?;
    let record = s.mutate(|e| {
        let id = e.add_macro(draft)?;
        Ok(e.registry().get(id).cloned().expect("just added"))
    })?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn remove_macro(
    State(s): State<SharedState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<MacroRecord>, ApiError> {
    let id: u64 = id
        .parse()
        .map_err(|_| ApiError::bad_request(format!("`{id}` is not a macro id")).with_detail("id"))?;
    let removed = s.mutate(|e| Ok(e.remove_macro(MacroId(id))?))?;
    Ok(Json(removed))
}

async fn route(State(s): State<SharedState>, body: Bytes) -> Result<Json<RouteOutcome>, ApiError> {
    let req: RouteRequest = parse_body(&body)?;
    Ok(Json(s.snapshot().route(&req.utterance)))
}

async fn execute(State(s): State<SharedState>, body: Bytes) -> Result<Json<HandleOutcome>, ApiError> {
    let req: ExecuteRequest = parse_body(&body)?;
    let snapshot = s.snapshot();
    let transport = Arc::clone(&s.transport);
    // Live transports block; keep them off the async workers.
    let outcome = tokio::task::spawn_blocking(move || {
        let transport = (!req.dry_run).then_some(&*transport);
        snapshot.run(&req.utterance, transport)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;
    if let HandleOutcome::Executed { feedback, .. } = &outcome {
        s.mutate(|e| Ok(e.apply_feedback(feedback.clone())?))?;
    }
    Ok(Json(outcome))
}

async fn feedback(State(s): State<SharedState>, body: Bytes) -> Result<Json<FeedbackResponse>, ApiError> {
    let req: FeedbackRequest = parse_body(&body)?;
    let source = req.source.unwrap_or(FeedbackSource::User);
    let stats = s.mutate(|e| Ok(e.record_feedback(req.macro_id, req.outcome, source)?))?;
    Ok(Json(FeedbackResponse {
        macro_id: req.macro_id,
        stats,
        smoothed_rate: stats.smoothed_rate(),
    }))
}

async fn train_propose(State(s): State<SharedState>, body: Bytes) -> Result<Json<ProposeResponse>, ApiError> {
    let req: ProposeRequest = parse_body(&body)?;
    let snapshot = s.snapshot();
    let mut session = TrainingSession::new(&req.description)?;
    session.propose(&snapshot, req.k.unwrap_or(DEFAULT_PROPOSALS))?;
    let response = ProposeResponse {
        session_id: s.next_session.fetch_add(1, Ordering::Relaxed),
        state: session.state,
        proposals: proposals(&snapshot, &session),
    };
    s.sessions
        .lock()
        .unwrap_or_else(PoisonError::into_inner)
        .insert(response.session_id, session);
    Ok(Json(response))
}

async fn train_commit(
    State(s): State<SharedState>,
    body: Bytes,
) -> Result<(StatusCode, Json<CommitResponse>), ApiError> {
    let req: CommitRequest = parse_body(&body)?;
    let mut session = match req.session_id {
        Some(sid) => s
            .sessions
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .remove(&sid)
            .ok_or_else(|| ApiError::not_found(format!("no training session {sid}")).with_detail("session_id"))?,
        None => {
            let mut session = TrainingSession::new(&req.draft.scenario_description)?;
            session.propose(&s.snapshot(), DEFAULT_PROPOSALS)?;
            session
        }
    };
    let macro_name = req.draft.macro_name.clone();
    let result = session
        .draft(req.draft)
        .map_err(ApiError::from)
        .and_then(|()| s.mutate(|e| Ok(e.commit_training(&mut session)?)));
    match result {
        Ok(id) => Ok((
            StatusCode::CREATED,
            Json(CommitResponse {
                id,
                macro_name,
                session_id: req.session_id,
                state: session.state,
            }),
        )),
        Err(err) => {
            // A rejected draft leaves the session open for another attempt.
            if let Some(sid) = req.session_id {
                s.sessions
                    .lock()
                    .unwrap_or_else(PoisonError::into_inner)
                    .insert(sid, session);
            }
            Err(err)
        }
    }
}

async fn stats(State(s): State<SharedState>) -> Json<StatsResponse> {
    let engine = s.engine();
    let macros = engine
        .registry()
        .macros()
        .iter()
        .map(|m| MacroStats {
            id: m.id,
            macro_name: m.macro_name.clone(),
            successes: m.stats.successes,
            attempts: m.stats.attempts,
            smoothed_rate: m.stats.smoothed_rate(),
        })
        .collect();
    Json(StatsResponse {
        macros,
        config: engine.config().clone(),
    })
}
