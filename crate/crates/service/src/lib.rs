//! HTTP backend for human evaluation: live chat-and-rate sessions, pairwise
//! comparisons and static corpus-quality rating.
//!
//! Every accepted write is appended to an event log before it becomes
//! visible, and the log is replayed on startup.

pub mod agents;
pub mod model;
pub mod reports;
pub mod store;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use supportsim_core::dialogue::Dialogue;
use supportsim_core::sft::ExportMode;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::agents::AgentRegistry;
use crate::model::*;
use crate::store::{EventLog, StoreError};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub min_turns: usize,
    /// Allowed browser origin for the evaluation UI; `None` allows any.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { min_turns: DEFAULT_MIN_TURNS, cors_origin: None }
    }
}

/// A named corpus offered for static quality rating.
#[derive(Debug, Clone)]
pub struct QualityCorpus {
    pub name: String,
    pub dialogues: Vec<Dialogue>,
}

#[derive(Default)]
struct Inner {
    sessions: BTreeMap<String, EvalSession>,
    comparisons: Vec<PairwiseComparison>,
    assignments: BTreeMap<String, QualityAssignment>,
    judgments: BTreeMap<String, QualityJudgment>,
    /// (corpus, dialogue id) -> evaluators assigned so far.
    assigned: HashMap<(String, String), Vec<String>>,
    /// Index of the corpus the next assignment search starts from.
    cursor: usize,
}

impl Inner {
    fn apply(&mut self, event: Event, min_turns: usize, corpora: &[QualityCorpus]) {
        match event {
            Event::SessionCreated { id, evaluator_id, agent_config, at } => {
                self.sessions.insert(
                    id.clone(),
                    EvalSession {
                        id,
                        evaluator_id,
                        agent_config,
                        turns: Vec::new(),
                        state: SessionState::Active,
                        ratings: None,
                        created_at: at,
                    },
                );
            }
            Event::Exchange { id, seeker, supporter } => {
                if let Some(s) = self.sessions.get_mut(&id) {
                    s.turns.push(seeker);
                    s.turns.push(supporter);
                    if s.state == SessionState::Active && s.pairs() >= min_turns {
                        s.state = SessionState::ReadyToRate;
                    }
                }
            }
            Event::SessionRated { id, ratings, .. } => {
                if let Some(s) = self.sessions.get_mut(&id) {
                    s.ratings = Some(ratings);
                    s.state = SessionState::Rated;
                }
            }
            Event::Comparison { comparison, .. } => self.comparisons.push(comparison),
            Event::TaskAssigned { assignment, .. } => {
                if let Some(i) = corpora.iter().position(|c| c.name == assignment.corpus) {
                    self.cursor = (i + 1) % corpora.len();
                }
                self.assigned
                    .entry((assignment.corpus.clone(), assignment.dialogue_id.clone()))
                    .or_default()
                    .push(assignment.evaluator_id.clone());
                self.assignments.insert(assignment.task_id.clone(), assignment);
            }
            Event::QualityJudged { judgment, .. } => {
                self.judgments.insert(judgment.task_id.clone(), judgment);
            }
        }
    }
}

pub struct AppState {
    inner: Mutex<Inner>,
    log: EventLog,
    agents: AgentRegistry,
    corpora: Vec<QualityCorpus>,
    cfg: ServiceConfig,
    session_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    /// Opens the store at `dir` and replays its event log.
    pub fn open(
        dir: impl AsRef<Path>,
        agents: AgentRegistry,
        corpora: Vec<QualityCorpus>,
        cfg: ServiceConfig,
    ) -> Result<Arc<Self>, StoreError> {
        let (log, events) = EventLog::open(dir)?;
        let mut inner = Inner::default();
        for e in events {
            inner.apply(e, cfg.min_turns, &corpora);
        }
        log::info!(
            "store {}: {} sessions, {} comparisons, {} quality tasks",
            log.dir().display(),
            inner.sessions.len(),
            inner.comparisons.len(),
            inner.assignments.len()
        );
        Ok(Arc::new(Self {
            inner: Mutex::new(inner),
            log,
            agents,
            corpora,
            cfg,
            session_locks: Mutex::new(HashMap::new()),
        }))
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Persists then applies.
    fn commit(&self, inner: &mut Inner, event: Event) -> Result<(), ApiError> {
        self.log.append(&event).map_err(|e| ApiError::internal(e.to_string()))?;
        inner.apply(event, self.cfg.min_turns, &self.corpora);
        Ok(())
    }

    fn session_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.session_locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    pub fn store_dir(&self) -> &Path {
        self.log.dir()
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    retryable: Option<bool>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), retryable: None }
    }
    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }
    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no {what} {id:?}"))
    }
    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(r) = self.retryable {
            body["retryable"] = Value::Bool(r);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

fn session_view(s: &EvalSession, min_turns: usize) -> Value {
    let mut v = serde_json::to_value(s).expect("session serializes");
    v["pairs"] = json!(s.pairs());
    v["min_turns"] = json!(min_turns);
    v
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    agent_config: AgentConfig,
    evaluator_id: String,
}

async fn create_session(State(st): Shared, body: Result<Json<CreateSession>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    if req.evaluator_id.trim().is_empty() {
        return Err(ApiError::bad_request("evaluator_id must not be empty"));
    }
    if !st.agents.contains_key(&req.agent_config.model) {
        let known: Vec<&String> = st.agents.keys().collect();
        return Err(ApiError::bad_request(format!(
            "unknown model tag {:?} (configured: {known:?})",
            req.agent_config.model
        )));
    }
    let mut inner = st.lock();
    let id = format!("s{:06}", inner.sessions.len() + 1);
    st.commit(
        &mut inner,
        Event::SessionCreated {
            id: id.clone(),
            evaluator_id: req.evaluator_id,
            agent_config: req.agent_config,
            at: now(),
        },
    )?;
    let view = session_view(&inner.sessions[&id], st.cfg.min_turns);
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(st): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let inner = st.lock();
    let s = inner.sessions.get(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    Ok(Json(session_view(s, st.cfg.min_turns)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PostMessage {
    text: String,
}

async fn post_message(
    State(st): Shared,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<PostMessage>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(req) = body?;
    let text = req.text.trim().to_string();
    if text.is_empty() {
        return Err(ApiError::bad_request("message text must not be empty"));
    }
    // One message at a time per session; other sessions proceed freely.
    let lock = st.session_lock(&id);
    let _turn = lock.lock().await;
    let (history, agent_config) = {
        let inner = st.lock();
        let s = inner.sessions.get(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
        if s.state == SessionState::Rated {
            return Err(ApiError::conflict("session is already rated"));
        }
        (s.turns.clone(), s.agent_config.clone())
    };
    let agent = st
        .agents
        .get(&agent_config.model)
        .cloned()
        .ok_or_else(|| ApiError::conflict(format!("model {:?} is no longer configured", agent_config.model)))?;
    let seeker = Turn { role: Role::Seeker, text, timestamp: now() };
    let (sid, prompt, mode) = (id.clone(), seeker.text.clone(), agent_config.mode);
    let outcome = tokio::task::spawn_blocking(move || agent.reply(&sid, mode, &history, &prompt))
        .await
        .map_err(|e| ApiError::internal(format!("agent task failed: {e}")))?;
    let reply = match outcome {
        Ok(r) if !r.trim().is_empty() => r,
        Ok(_) => {
            return Err(ApiError {
                status: StatusCode::BAD_GATEWAY,
                message: "agent returned an empty reply".into(),
                retryable: Some(true),
            })
        }
        Err(e) => {
            log::warn!("session {id}: {e}");
            return Err(ApiError { status: StatusCode::BAD_GATEWAY, message: e.to_string(), retryable: Some(e.is_retryable()) });
        }
    };
    let supporter = Turn { role: Role::Supporter, text: reply, timestamp: now() };
    let mut inner = st.lock();
    st.commit(&mut inner, Event::Exchange { id: id.clone(), seeker, supporter: supporter.clone() })?;
    let s = &inner.sessions[&id];
    Ok(Json(json!({
        "reply": supporter,
        "state": s.state,
        "pairs": s.pairs(),
        "min_turns": st.cfg.min_turns,
    })))
}

async fn post_ratings(
    State(st): Shared,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Ratings>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(ratings) = body?;
    let bad = out_of_range(&INTERACTIVE_DIMENSIONS, &ratings.values());
    if !bad.is_empty() {
        return Err(ApiError::bad_request(format!("scores must be 0 to {MAX_SCORE}: {}", bad.join(", "))));
    }
    let lock = st.session_lock(&id);
    let _turn = lock.lock().await;
    let mut inner = st.lock();
    let s = inner.sessions.get(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    match s.state {
        SessionState::Active => {
            return Err(ApiError::conflict(format!(
                "session has {} of {} required turn pairs",
                s.pairs(),
                st.cfg.min_turns
            )))
        }
        SessionState::Rated => return Err(ApiError::conflict("session is already rated")),
        SessionState::ReadyToRate => {}
    }
    st.commit(&mut inner, Event::SessionRated { id: id.clone(), ratings, at: now() })?;
    Ok(Json(session_view(&inner.sessions[&id], st.cfg.min_turns)))
}

async fn post_comparison(
    State(st): Shared,
    body: Result<Json<PairwiseComparison>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(c) = body?;
    if c.evaluator_id.trim().is_empty() {
        return Err(ApiError::bad_request("evaluator_id must not be empty"));
    }
    if c.model_a == c.model_b {
        return Err(ApiError::bad_request("model_a and model_b must differ"));
    }
    for m in [&c.model_a, &c.model_b] {
        if !st.agents.contains_key(m) {
            return Err(ApiError::bad_request(format!("unknown model tag {m:?}")));
        }
    }
    if !INTERACTIVE_DIMENSIONS.contains(&c.dimension.as_str()) {
        return Err(ApiError::bad_request(format!(
            "unknown dimension {:?} (expected one of {INTERACTIVE_DIMENSIONS:?})",
            c.dimension
        )));
    }
    let mut inner = st.lock();
    st.commit(&mut inner, Event::Comparison { comparison: c.clone(), at: now() })?;
    Ok((StatusCode::CREATED, Json(c)).into_response())
}

#[derive(Deserialize)]
struct NextTaskQuery {
    evaluator_id: String,
}

fn task_view(st: &AppState, a: &QualityAssignment) -> Value {
    let dialogue = st
        .corpora
        .iter()
        .find(|c| c.name == a.corpus)
        .and_then(|c| c.dialogues.iter().find(|d| d.id == a.dialogue_id));
    let turns: Vec<Value> = dialogue
        .map(|d| d.utterances.iter().map(|u| json!({"speaker": u.speaker, "text": u.text})).collect())
        .unwrap_or_default();
    json!({
        "task_id": a.task_id,
        "corpus": a.corpus,
        "dialogue_id": a.dialogue_id,
        "evaluator_id": a.evaluator_id,
        "turns": turns,
        "criteria": QUALITY_CRITERIA,
    })
}

/// Next quality task for an evaluator: an unfinished one they already hold,
/// else a new assignment drawn round-robin across corpora from dialogues
/// that have fewer than three evaluators and not this one.
async fn next_task(State(st): Shared, query: Result<Query<NextTaskQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = query?;
    let evaluator = q.evaluator_id.trim().to_string();
    if evaluator.is_empty() {
        return Err(ApiError::bad_request("evaluator_id must not be empty"));
    }
    let mut inner = st.lock();
    if let Some(open) = inner
        .assignments
        .values()
        .find(|a| a.evaluator_id == evaluator && !inner.judgments.contains_key(&a.task_id))
    {
        return Ok(Json(task_view(&st, open)).into_response());
    }
    let n = st.corpora.len();
    let mut pick = None;
    for step in 0..n {
        let corpus = &st.corpora[(inner.cursor + step) % n];
        let found = corpus.dialogues.iter().find(|d| {
            let got = inner.assigned.get(&(corpus.name.clone(), d.id.clone()));
            got.is_none_or(|es| es.len() < EVALUATORS_PER_DIALOGUE && !es.contains(&evaluator))
        });
        if let Some(d) = found {
            pick = Some((corpus.name.clone(), d.id.clone()));
            break;
        }
    }
    let Some((corpus, dialogue_id)) = pick else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let assignment = QualityAssignment {
        task_id: format!("t{:06}", inner.assignments.len() + 1),
        corpus,
        dialogue_id,
        evaluator_id: evaluator,
    };
    st.commit(&mut inner, Event::TaskAssigned { assignment: assignment.clone(), at: now() })?;
    Ok((StatusCode::OK, Json(task_view(&st, &assignment))).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PostQuality {
    evaluator_id: String,
    scores: QualityScores,
}

async fn post_quality(
    State(st): Shared,
    UrlPath(task_id): UrlPath<String>,
    body: Result<Json<PostQuality>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let bad = out_of_range(&QUALITY_CRITERIA, &req.scores.values());
    if !bad.is_empty() {
        return Err(ApiError::bad_request(format!("scores must be 0 to {MAX_SCORE}: {}", bad.join(", "))));
    }
    let mut inner = st.lock();
    let a = inner.assignments.get(&task_id).ok_or_else(|| ApiError::not_found("task", &task_id))?;
    if a.evaluator_id != req.evaluator_id {
        return Err(ApiError::conflict("task is assigned to a different evaluator"));
    }
    if inner.judgments.contains_key(&task_id) {
        return Err(ApiError::conflict("task already judged"));
    }
    let judgment = QualityJudgment {
        task_id: task_id.clone(),
        corpus: a.corpus.clone(),
        dialogue_id: a.dialogue_id.clone(),
        evaluator_id: req.evaluator_id,
        scores: req.scores,
    };
    st.commit(&mut inner, Event::QualityJudged { judgment: judgment.clone(), at: now() })?;
    Ok((StatusCode::CREATED, Json(judgment)).into_response())
}

#[derive(Deserialize, Default)]
struct FormatQuery {
    #[serde(default)]
    format: Option<String>,
}

fn render(json_value: Value, csv: impl FnOnce() -> String, format: Option<&str>) -> ApiResult<Response> {
    match format.unwrap_or("json") {
        "json" => Ok(Json(json_value).into_response()),
        "csv" => Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv()).into_response()),
        other => Err(ApiError::bad_request(format!("unknown format {other:?} (json or csv)"))),
    }
}

async fn interactive_report(State(st): Shared, query: Result<Query<FormatQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = query?;
    let report = {
        let inner = st.lock();
        reports::interactive_report(inner.sessions.values(), &inner.comparisons)
    };
    render(serde_json::to_value(&report).expect("report"), || reports::interactive_csv(&report), q.format.as_deref())
}

async fn quality_report(State(st): Shared, query: Result<Query<FormatQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = query?;
    let report = {
        let inner = st.lock();
        reports::quality_report(inner.judgments.values())
    };
    render(serde_json::to_value(&report).expect("report"), || reports::quality_csv(&report), q.format.as_deref())
}

async fn ui_config(State(st): Shared) -> Json<Value> {
    let help = dimension_help();
    let describe = |keys: &[&str]| -> Vec<Value> { keys.iter().map(|k| json!({"key": k, "help": help[k]})).collect() };
    Json(json!({
        "min_turns": st.cfg.min_turns,
        "score_min": 0,
        "score_max": MAX_SCORE,
        "interactive_dimensions": describe(&INTERACTIVE_DIMENSIONS),
        "quality_criteria": describe(&QUALITY_CRITERIA),
        "outcomes": ["win", "loss", "tie"],
        "agents": st.agents.keys().collect::<Vec<_>>(),
        "modes": [ExportMode::Plain, ExportMode::ReasoningFirst],
        "evaluators_per_dialogue": EVALUATORS_PER_DIALOGUE,
        "corpora": st.corpora.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let origin = match &state.cfg.cors_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => AllowOrigin::exact(v),
            Err(_) => {
                log::warn!("invalid CORS origin {o:?}; allowing any origin");
                AllowOrigin::any()
            }
        },
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/ratings", post(post_ratings))
        .route("/comparisons", post(post_comparison))
        .route("/tasks/next", get(next_task))
        .route("/tasks/{id}/quality", post(post_quality))
        .route("/reports/interactive", get(interactive_report))
        .route("/reports/quality", get(quality_report))
        .route("/ui-config", get(ui_config))
        .layer(cors)
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Checks that quality corpora have unique names and unique dialogue ids.
pub fn check_corpora(corpora: &[QualityCorpus]) -> Result<(), String> {
    let mut names = HashSet::new();
    for c in corpora {
        if !names.insert(&c.name) {
            return Err(format!("duplicate corpus name {:?}", c.name));
        }
        let mut ids = HashSet::new();
        for d in &c.dialogues {
            if !ids.insert(&d.id) {
                return Err(format!("corpus {:?} has duplicate dialogue id {:?}", c.name, d.id));
            }
        }
    }
    Ok(())
}
