//! HTTP front end for the story workflow.
//!
//! Sessions live in memory as immutable snapshots and on disk as one JSON
//! file each. Mutations take the session's writer lock, work on a copy,
//! persist it, then swap the snapshot in; readers never wait on a writer.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::trace::TraceLayer;

use loom_core::analytics::{asymmetry_stats, build_transition_matrix, compute_metrics};
use loom_core::domain::{DomainError, FieldViolation, PersonaId, SessionId, StoryBeat, StorySession};
use loom_core::engine::{EngineError, StoryEngine};
use loom_core::error::ErrorClass;
use loom_core::gateway::GatewayError;
use loom_core::replay::SparkleSpec;
use loom_core::store::{PortfolioStore, StoreError};

struct Slot {
    writer: tokio::sync::Mutex<()>,
    snapshot: RwLock<Arc<StorySession>>,
}

impl Slot {
    fn new(session: StorySession) -> Arc<Self> {
        Arc::new(Self {
            writer: tokio::sync::Mutex::new(()),
            snapshot: RwLock::new(Arc::new(session)),
        })
    }

    fn current(&self) -> Arc<StorySession> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

pub struct AppState {
    engine: StoryEngine,
    store: PortfolioStore,
    slots: Mutex<HashMap<SessionId, Arc<Slot>>>,
}

impl AppState {
    pub fn new(engine: StoryEngine, store: PortfolioStore) -> Arc<Self> {
        Arc::new(Self {
            engine,
            store,
            slots: Mutex::new(HashMap::new()),
        })
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        let id = SessionId::new(id).map_err(|_| ApiError::not_found(format!("session `{id}` not found")))?;
        if let Some(slot) = self.slots.lock().expect("slots lock").get(&id) {
            return Ok(slot.clone());
        }
        let session = self.store.load(&id)?;
        let mut slots = self.slots.lock().expect("slots lock");
        Ok(slots.entry(id).or_insert_with(|| Slot::new(session)).clone())
    }

    fn commit(&self, slot: &Slot, session: StorySession) -> Result<Arc<StorySession>, ApiError> {
        self.store.save(&session)?;
        let session = Arc::new(session);
        *slot.snapshot.write().expect("snapshot lock") = session.clone();
        Ok(session)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/proposals", post(next_round))
        .route("/sessions/{id}/proposals/{persona}/retry", post(retry_persona))
        .route("/sessions/{id}/proposals/{persona}/beat", put(edit_beat))
        .route("/sessions/{id}/select", post(select))
        .route("/sessions/{id}/expand", post(expand))
        .route("/sessions/{id}/segments/{n}/refine", post(refine))
        .route("/sessions/{id}/segments/{n}", put(manual_edit))
        .route("/sessions/{id}/brainstorm", post(brainstorm))
        .route("/sessions/{id}/finish", post(finish))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/analytics/transitions", get(transitions))
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

/// Error body: `{"error": {"class", "message", ...}}`.
#[derive(Debug)]
pub struct ApiError {
    class: ErrorClass,
    message: String,
    detail: Value,
    retry_after: Option<u64>,
}

impl ApiError {
    fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
            detail: Value::Null,
            retry_after: None,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::NotFound, message)
    }

    fn violations(mut self, v: Vec<FieldViolation>) -> Self {
        if !v.is_empty() {
            self.detail = json!({ "violations": v });
        }
        self
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let mut err = ApiError::new(e.class(), e.to_string());
        match &e {
            EngineError::Invalid(d) => err = err.violations(d.violations()),
            EngineError::AllPersonasFailed(f) => err.detail = json!({ "failures": f }),
            EngineError::PersonaFailed { persona_id, error } => {
                err.detail = json!({ "failures": [{"persona_id": persona_id, "class": error.class(), "message": error.to_string()}] })
            }
            _ => {}
        }
        let rate = match &e {
            EngineError::Gateway(GatewayError::RateLimited { retry_after }) => Some(retry_after),
            EngineError::PersonaFailed {
                error: loom_core::variation::LegError::Gateway(GatewayError::RateLimited { retry_after }),
                ..
            } => Some(retry_after),
            _ => None,
        };
        err.retry_after = rate.and_then(|d| d.map(|d| d.as_secs().max(1)));
        err
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::new(e.class(), e.to_string())
    }
}

impl From<DomainError> for ApiError {
    fn from(e: DomainError) -> Self {
        ApiError::new(ErrorClass::Invalid, e.to_string()).violations(e.violations())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(ErrorClass::Invalid, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.class.http_status()).expect("valid status");
        let mut body = json!({ "class": self.class, "message": self.message });
        if let Value::Object(detail) = self.detail {
            body.as_object_mut().expect("object").extend(detail);
        }
        let mut response = (status, axum::Json(json!({ "error": body }))).into_response();
        if let Some(secs) = self.retry_after {
            response
                .headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        response
    }
}

/// `Json` whose rejections use the API error body.
#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
struct Json<T>(T);

impl<T: Serialize> IntoResponse for Json<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    let backend = state.engine.gateway.backend_name().to_owned();
    match state.engine.gateway.health().await {
        Ok(()) => axum::Json(json!({ "status": "ok", "backend": backend })).into_response(),
        Err(e) => (
            StatusCode::SERVICE_UNAVAILABLE,
            axum::Json(json!({ "status": "unavailable", "backend": backend, "message": e.to_string() })),
        )
            .into_response(),
    }
}

#[derive(Deserialize)]
struct CreateBody {
    sparkle: SparkleSpec,
    #[serde(default)]
    session_id: Option<String>,
}

async fn create_session(State(state): State<Arc<AppState>>, Json(body): Json<CreateBody>) -> Result<Response, ApiError> {
    let sparkle = body.sparkle.to_sparkle()?;
    let id = body.session_id.map(SessionId::new).transpose()?;
    if let Some(id) = &id {
        if state.store.exists(id) {
            return Err(ApiError::new(ErrorClass::Conflict, format!("session `{}` already exists", id.as_str())));
        }
    }
    let session = state.engine.create_session(id, sparkle).await?;
    state.store.save(&session)?;
    state
        .slots
        .lock()
        .expect("slots lock")
        .insert(session.session_id.clone(), Slot::new(session.clone()));
    Ok((StatusCode::CREATED, axum::Json(session)).into_response())
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> ApiResult<Vec<loom_core::store::SessionSummary>> {
    Ok(Json(state.store.list()?))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StorySession> {
    Ok(Json(StorySession::clone(&state.slot(&id)?.current())))
}

/// Run `$op` on a private copy of the session under its writer lock,
/// persist, publish, and evaluate `$out` against the new snapshot.
macro_rules! mutate {
    ($state:expr, $id:expr, |$engine:ident, $session:ident| $op:expr, |$done:ident| $out:expr) => {{
        let slot = $state.slot(&$id)?;
        let _writer = slot.writer.lock().await;
        let mut copy = StorySession::clone(&slot.current());
        {
            let $engine = &$state.engine;
            let $session = &mut copy;
            $op?;
        }
        let $done = $state.commit(&slot, copy)?;
        $out
    }};
}

fn open_round(session: &StorySession) -> Value {
    json!(session.current_round())
}

async fn next_round(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Value> {
    mutate!(state, id, |engine, s| engine.next_round(s).await, |done| Ok(Json(open_round(&done))))
}

async fn retry_persona(State(state): State<Arc<AppState>>, Path((id, persona)): Path<(String, String)>) -> ApiResult<Value> {
    let persona = PersonaId::from(persona.as_str());
    mutate!(state, id, |engine, s| engine.retry_persona(s, &persona).await, |done| Ok(Json(open_round(&done))))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BeatBody {
    Wrapped { edited_beat: StoryBeat },
    Beat { beat: StoryBeat },
    Bare(StoryBeat),
}

async fn edit_beat(
    State(state): State<Arc<AppState>>,
    Path((id, persona)): Path<(String, String)>,
    Json(body): Json<BeatBody>,
) -> ApiResult<Value> {
    let persona = PersonaId::from(persona.as_str());
    let beat = match body {
        BeatBody::Wrapped { edited_beat } => edited_beat,
        BeatBody::Beat { beat } => beat,
        BeatBody::Bare(beat) => beat,
    };
    mutate!(state, id, |engine, s| engine.edit_beat(s, &persona, beat).await, |done| Ok(Json(open_round(&done))))
}

#[derive(Deserialize)]
struct SelectBody {
    persona_id: PersonaId,
}

async fn select(State(state): State<Arc<AppState>>, Path(id): Path<String>, Json(body): Json<SelectBody>) -> ApiResult<StorySession> {
    mutate!(state, id, |engine, s| engine.select(s, &body.persona_id), |done| Ok(Json(StorySession::clone(&done))))
}

fn segment(session: &StorySession, n: usize) -> Value {
    json!(session.segment(n))
}

async fn expand(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Value> {
    let mut n = 0;
    mutate!(
        state,
        id,
        |engine, s| engine.expand(s).await.map(|seg| n = seg.beat_index),
        |done| Ok(Json(segment(&done, n)))
    )
}

#[derive(Deserialize)]
struct RefineBody {
    instruction: String,
}

async fn refine(
    State(state): State<Arc<AppState>>,
    Path((id, n)): Path<(String, usize)>,
    Json(body): Json<RefineBody>,
) -> ApiResult<Value> {
    mutate!(state, id, |engine, s| engine.refine(s, n, &body.instruction).await, |done| Ok(Json(segment(&done, n))))
}

#[derive(Deserialize)]
struct ProseBody {
    prose: String,
}

async fn manual_edit(
    State(state): State<Arc<AppState>>,
    Path((id, n)): Path<(String, usize)>,
    Json(body): Json<ProseBody>,
) -> ApiResult<Value> {
    mutate!(state, id, |engine, s| engine.manual_edit(s, n, &body.prose).await, |done| Ok(Json(segment(&done, n))))
}

#[derive(Deserialize)]
struct BrainstormBody {
    message: String,
}

async fn brainstorm(State(state): State<Arc<AppState>>, Path(id): Path<String>, Json(body): Json<BrainstormBody>) -> ApiResult<Value> {
    let mut reply = String::new();
    mutate!(
        state,
        id,
        |engine, s| engine.brainstorm(s, &body.message).await.map(|r| reply = r),
        |_done| Ok(Json(json!({ "reply": reply })))
    )
}

async fn finish(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StorySession> {
    mutate!(state, id, |engine, s| engine.finish(s), |done| Ok(Json(StorySession::clone(&done))))
}

async fn metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Value> {
    let session = state.slot(&id)?.current();
    Ok(Json(json!(compute_metrics(&session.story_text(), &session.beats))))
}

async fn transitions(State(state): State<Arc<AppState>>) -> ApiResult<Value> {
    let logs: Vec<Vec<PersonaId>> = state
        .store
        .load_all()?
        .into_iter()
        .map(|s| s.selection_log)
        .collect();
    let matrix = build_transition_matrix(&state.engine.roster, &logs)
        .map_err(|e| ApiError::new(ErrorClass::Invalid, e.to_string()))?;
    let asymmetry = asymmetry_stats(&matrix).ok();
    Ok(Json(json!({ "matrix": matrix, "asymmetry": asymmetry })))
}
