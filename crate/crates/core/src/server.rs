//! JSON HTTP API over the catalog, galleries, ranking sessions, summaries and
//! trained rankings.
//!
//! State lives in append-only JSONL logs under the state directory:
//! `events.jsonl` (session events), `selections.jsonl` (gallery selections) and
//! `preferences.jsonl` (pairwise preferences). Every state-changing request
//! writes and syncs its records before it is acknowledged, and sessions are
//! rebuilt by replaying `events.jsonl` on startup.
//!
//! | method | path | |
//! |---|---|---|
//! | GET  | `/api/v1/catalog` | model and prompt metadata with counts |
//! | GET  | `/api/v1/gallery?prompt_id=&lambda=&nsfw_threshold=&session_id=` | gallery payload |
//! | POST | `/api/v1/selections` | record a gallery (un)selection |
//! | POST | `/api/v1/sessions` | create a ranking session |
//! | GET  | `/api/v1/sessions/{id}` | full session state |
//! | POST | `/api/v1/sessions/{id}/battle` | `{chosen, round?}` |
//! | POST | `/api/v1/sessions/{id}/dragsort` | `{batch_index, final_order}` |
//! | GET  | `/api/v1/sessions/{id}/summary` | dashboard statistics |
//! | GET  | `/api/v1/rank?user_id=&prompt_id=&top=` | personalized ranking |
//! | GET  | `/assets/{path}` | image asset, or an SVG placeholder |

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::{Catalog, ModelId, PromptId};
use crate::elicitation::{self, RankingSession, SessionEvent, SessionState};
use crate::error::Error;
use crate::jsonl::AppendLog;
use crate::layout::{LayoutCache, LayoutParams};
use crate::ltr::{self, BprModel};
use crate::metrics::GreWeights;
use crate::retrieval::{self, Selection, SelectionStore};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SELECTIONS_FILE: &str = "selections.jsonl";
pub const PREFERENCES_FILE: &str = "preferences.jsonl";

/// Error body returned by every failing endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub http_status: u16,
}

impl From<&Error> for ApiError {
    fn from(e: &Error) -> Self {
        Self {
            code: e.code().to_string(),
            message: e.to_string(),
            http_status: e.http_status(),
        }
    }
}

impl IntoResponse for Error {
    fn into_response(self) -> Response {
        let body = ApiError::from(&self);
        let status =
            StatusCode::from_u16(body.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub state_dir: PathBuf,
    pub seed: u64,
    pub weights: GreWeights,
    pub nsfw_threshold: f64,
    pub min_pool: usize,
    pub layout_params: LayoutParams,
    pub assets_dir: Option<PathBuf>,
    /// Compute every prompt's layout while opening the state.
    pub precompute_layouts: bool,
}

impl ServerConfig {
    pub fn new(state_dir: impl Into<PathBuf>) -> Self {
        Self {
            state_dir: state_dir.into(),
            seed: 0,
            weights: GreWeights::default(),
            nsfw_threshold: retrieval::DEFAULT_NSFW_THRESHOLD,
            min_pool: elicitation::DEFAULT_MIN_POOL,
            layout_params: LayoutParams::default(),
            assets_dir: None,
            precompute_layouts: true,
        }
    }
}

struct SessionIds {
    rng: ChaCha8Rng,
    created: usize,
}

pub struct AppState {
    catalog: Arc<Catalog>,
    config: ServerConfig,
    layouts: LayoutCache,
    selections: SelectionStore,
    events: AppendLog,
    preferences: AppendLog,
    sessions: RwLock<HashMap<String, Arc<Mutex<RankingSession>>>>,
    ids: Mutex<SessionIds>,
    model: RwLock<Option<Arc<BprModel>>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl AppState {
    /// Open the state directory, replaying any existing session history.
    pub fn open(catalog: Arc<Catalog>, mut config: ServerConfig) -> crate::Result<Self> {
        let smallest = catalog
            .prompts()
            .iter()
            .map(|p| catalog.images_for_prompt(p.prompt_id).map(|v| v.len()))
            .collect::<crate::Result<Vec<_>>>()?
            .into_iter()
            .min()
            .unwrap_or(0);
        config.layout_params = config.layout_params.fitted_to(smallest);

        std::fs::create_dir_all(&config.state_dir)?;
        let events = AppendLog::open(config.state_dir.join(EVENTS_FILE))?;
        let history: Vec<SessionEvent> = events.read_all()?;
        let replayed = elicitation::replay(&history)?;

        // session seeds come from one server-wide stream; skip the ones already used
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for _ in 0..replayed.len() {
            let _: u64 = rng.random();
        }
        let created = replayed.len();
        let sessions = replayed
            .into_iter()
            .map(|(id, s)| (id, Arc::new(Mutex::new(s))))
            .collect();

        let layouts = LayoutCache::new();
        if config.precompute_layouts {
            layouts.precompute_all(&catalog, &config.layout_params, &config.weights)?;
        }
        Ok(Self {
            selections: SelectionStore::open(config.state_dir.join(SELECTIONS_FILE))?,
            preferences: AppendLog::open(config.state_dir.join(PREFERENCES_FILE))?,
            catalog,
            layouts,
            events,
            sessions: RwLock::new(sessions),
            ids: Mutex::new(SessionIds { rng, created }),
            model: RwLock::new(None),
            config,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn layouts(&self) -> &LayoutCache {
        &self.layouts
    }

    /// Replace the ranking model used by `/rank`.
    pub fn set_model(&self, model: Option<BprModel>) {
        *self.model.write().expect("model lock poisoned") = model.map(Arc::new);
    }

    pub fn session(&self, id: &str) -> ApiResult<Arc<Mutex<RankingSession>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::not_found("session", id))
    }

    /// Snapshot of every session, keyed by id.
    pub fn sessions_snapshot(&self) -> HashMap<String, RankingSession> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .iter()
            .map(|(k, v)| (k.clone(), v.lock().expect("session poisoned").clone()))
            .collect()
    }

    fn persist(&self, session: &mut RankingSession) -> ApiResult<()> {
        for event in session.take_pending_events() {
            self.events.append(&event)?;
        }
        Ok(())
    }

    /// Apply `f` to a copy of the session, persist what it produced, then commit.
    fn mutate<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut RankingSession) -> crate::Result<T>,
    ) -> ApiResult<(T, RankingSession)> {
        let handle = self.session(id)?;
        let mut guard = handle.lock().expect("session poisoned");
        let mut next = guard.clone();
        let before = next.preferences.len();
        let out = f(&mut next)?;
        for p in &next.preferences[before..] {
            self.preferences.append(p)?;
        }
        self.persist(&mut next)?;
        *guard = next.clone();
        Ok((out, next))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/catalog", get(get_catalog))
        .route("/api/v1/gallery", get(get_gallery))
        .route("/api/v1/selections", post(post_selection))
        .route("/api/v1/sessions", post(post_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/battle", post(post_battle))
        .route("/api/v1/sessions/{id}/dragsort", post(post_dragsort))
        .route("/api/v1/sessions/{id}/summary", get(get_summary))
        .route("/api/v1/rank", get(get_rank))
        .route("/assets/{*path}", get(get_asset))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| Error::BadRequest(format!("invalid body: {e}")))
}

fn session_view(s: &RankingSession) -> Value {
    let mut view = json!({
        "session_id": s.session_id,
        "user_id": s.user_id,
        "prompt_id": s.prompt_id,
        "mode": s.mode,
        "pool": s.pool,
        "status": s.status,
        "next_round": s.next_round(),
        "preferences": s.preferences.len(),
    });
    match &s.state {
        SessionState::Battle(b) => {
            view["current_pair"] = json!(b.current_pair);
            view["champion"] = json!(b.champion);
        }
        SessionState::Dragsort(d) => {
            view["batches"] = json!(d.batches);
            view["submitted"] = json!(d.submitted.iter().map(Option::is_some).collect::<Vec<_>>());
        }
    }
    view
}

async fn get_catalog(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let c = st.catalog();
    Ok(Json(json!({
        "models": c.models(),
        "prompts": c.prompts(),
        "counts": {
            "models": c.models().len(),
            "prompts": c.prompts().len(),
            "images": c.images().len(),
            "dim": c.dim(),
        },
    })))
}

#[derive(Debug, Deserialize)]
struct GalleryQuery {
    prompt_id: Option<String>,
    lambda: Option<String>,
    nsfw_threshold: Option<String>,
    session_id: Option<String>,
}

fn parse_prompt(raw: Option<&str>) -> ApiResult<PromptId> {
    raw.ok_or_else(|| Error::BadRequest("prompt_id is required".into()))?
        .parse()
        .map_err(|_| Error::BadRequest("prompt_id must be an integer".into()))
}

fn parse_threshold(raw: Option<&str>, default: f64) -> ApiResult<f64> {
    let t = match raw {
        None => default,
        Some(s) => s
            .parse()
            .map_err(|_| Error::BadRequest("nsfw_threshold must be a number".into()))?,
    };
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::BadRequest("nsfw_threshold must lie in [0, 1]".into()));
    }
    Ok(t)
}

async fn get_gallery(
    State(st): State<Arc<AppState>>,
    Query(q): Query<GalleryQuery>,
) -> ApiResult<Json<retrieval::GalleryPayload>> {
    let prompt_id = parse_prompt(q.prompt_id.as_deref())?;
    let weights = match q.lambda.as_deref() {
        None => st.config.weights,
        Some(s) => s.parse()?,
    };
    let threshold = parse_threshold(q.nsfw_threshold.as_deref(), st.config.nsfw_threshold)?;
    let payload = retrieval::gallery_payload(
        st.catalog(),
        &st.layouts,
        &st.config.layout_params,
        prompt_id,
        &weights,
        threshold,
    )?;
    if let Some(sid) = &q.session_id {
        st.selections.register_gallery(sid, prompt_id, payload.model_ids());
    }
    Ok(Json(payload))
}

#[derive(Debug, Deserialize)]
struct SelectionBody {
    session_id: String,
    prompt_id: PromptId,
    model_id: ModelId,
    #[serde(default = "yes")]
    selected: bool,
}

fn yes() -> bool {
    true
}

async fn post_selection(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: SelectionBody = parse_body(&body)?;
    let ack = st.selections.record_selection(Selection {
        session_id: b.session_id.clone(),
        prompt_id: b.prompt_id,
        model_id: b.model_id,
        timestamp: now_ms(),
        selected: b.selected,
    })?;
    Ok(Json(json!({
        "ack": true,
        "appended": ack.appended,
        "log_len": ack.log_len,
        "selected_models": st.selections.selected_models(&b.session_id, b.prompt_id),
    })))
}

#[derive(Debug, Deserialize)]
struct CreateSessionBody {
    user_id: String,
    prompt_id: PromptId,
    #[serde(default)]
    selected_models: Vec<ModelId>,
    min_pool: Option<usize>,
}

async fn post_session(
    State(st): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let b: CreateSessionBody = parse_body(&body)?;
    let ranked = retrieval::pre_rank(
        st.catalog(),
        b.prompt_id,
        &st.config.weights,
        st.config.nsfw_threshold,
    )?;
    let min_pool = b.min_pool.unwrap_or(st.config.min_pool);

    // hold the id lock across creation so ids and seeds stay in log order
    let mut ids = st.ids.lock().expect("id lock poisoned");
    let seed: u64 = ids.rng.clone().random();
    let session_id = format!("sess-{:06}", ids.created + 1);
    let mut session = elicitation::create_session(
        &session_id,
        &b.user_id,
        b.prompt_id,
        &b.selected_models,
        &ranked,
        min_pool,
        seed,
    )?;
    st.persist(&mut session)?;
    let _: u64 = ids.rng.random();
    ids.created += 1;
    let view = session_view(&session);
    st.sessions
        .write()
        .expect("session map poisoned")
        .insert(session_id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let handle = st.session(&id)?;
    let s = handle.lock().expect("session poisoned");
    Ok(Json(session_view(&s)))
}

#[derive(Debug, Deserialize)]
struct BattleBody {
    chosen: ModelId,
    round: Option<usize>,
}

async fn post_battle(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let b: BattleBody = parse_body(&body)?;
    let (outcome, session) = st.mutate(&id, |s| {
        if let Some(round) = b.round {
            if !s.is_finished() && round != s.next_round() {
                return Err(Error::StaleRound {
                    expected: s.next_round(),
                    got: round,
                });
            }
        }
        s.battle_choose(b.chosen, now_ms())
    })?;
    Ok(Json(json!({ "outcome": outcome, "session": session_view(&session) })))
}

#[derive(Debug, Deserialize)]
struct DragSortBody {
    batch_index: usize,
    final_order: Vec<ModelId>,
}

async fn post_dragsort(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let b: DragSortBody = parse_body(&body)?;
    let (ack, session) = st.mutate(&id, |s| s.dragsort_submit(b.batch_index, &b.final_order, now_ms()))?;
    Ok(Json(json!({ "ack": ack, "session": session_view(&session) })))
}

async fn get_summary(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<elicitation::SessionSummary>> {
    let handle = st.session(&id)?;
    let s = handle.lock().expect("session poisoned");
    Ok(Json(elicitation::session_summary(&s)?))
}

#[derive(Debug, Deserialize)]
struct RankQuery {
    user_id: Option<String>,
    prompt_id: Option<String>,
    top: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub model_id: ModelId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResponse {
    pub user_id: String,
    /// `"bpr"` for a trained user, `"gre_prior"` for the cold-start fallback.
    pub source: String,
    pub ranking: Vec<RankedModel>,
}

/// Personalized ranking over NSFW-safe candidates. Users unknown to `model`
/// get the GRE-Score prior: the prompt's pre-rank, or mean GRE across prompts.
pub fn rank_for_user(
    catalog: &Catalog,
    model: Option<&BprModel>,
    user_id: &str,
    prompt_id: Option<PromptId>,
    weights: &GreWeights,
    nsfw_threshold: f64,
) -> crate::Result<RankResponse> {
    let prior: Vec<(ModelId, f64)> = match prompt_id {
        Some(p) => retrieval::pre_rank(catalog, p, weights, nsfw_threshold)?
            .into_iter()
            .map(|e| (e.model_id, e.gre_score))
            .collect(),
        None => retrieval::global_pre_rank(catalog, weights, nsfw_threshold)?,
    };
    let (source, ranked) = match model.filter(|m| m.has_user(user_id)) {
        Some(m) => {
            let known: Vec<ModelId> = prior
                .iter()
                .map(|(id, _)| *id)
                .filter(|id| m.has_item(*id))
                .collect();
            let mut ranked = ltr::bpr_rank(m, user_id, &known)?;
            // models the ranker never saw follow in prior order
            ranked.extend(prior.iter().filter(|(id, _)| !m.has_item(*id)).copied());
            ("bpr", ranked)
        }
        None => ("gre_prior", prior),
    };
    Ok(RankResponse {
        user_id: user_id.to_string(),
        source: source.to_string(),
        ranking: ranked
            .into_iter()
            .map(|(model_id, score)| RankedModel { model_id, score })
            .collect(),
    })
}

async fn get_rank(
    State(st): State<Arc<AppState>>,
    Query(q): Query<RankQuery>,
) -> ApiResult<Json<RankResponse>> {
    let user_id = q
        .user_id
        .ok_or_else(|| Error::BadRequest("user_id is required".into()))?;
    let prompt_id = match q.prompt_id.as_deref() {
        None => None,
        some => Some(parse_prompt(some)?),
    };
    let model = st.model.read().expect("model lock poisoned").clone();
    let mut resp = rank_for_user(
        st.catalog(),
        model.as_deref(),
        &user_id,
        prompt_id,
        &st.config.weights,
        st.config.nsfw_threshold,
    )?;
    if let Some(top) = q.top {
        resp.ranking.truncate(top);
    }
    Ok(Json(resp))
}

fn safe_join(root: &FsPath, rel: &str) -> Option<PathBuf> {
    let rel = FsPath::new(rel);
    rel.components()
        .all(|c| matches!(c, Component::Normal(_)))
        .then(|| root.join(rel))
}

async fn get_asset(State(st): State<Arc<AppState>>, Path(path): Path<String>) -> Response {
    if let Some(file) = st
        .config
        .assets_dir
        .as_deref()
        .and_then(|root| safe_join(root, &path))
    {
        if let Ok(bytes) = std::fs::read(&file) {
            let mime = match file.extension().and_then(|e| e.to_str()) {
                Some("png") => "image/png",
                Some("jpg" | "jpeg") => "image/jpeg",
                Some("webp") => "image/webp",
                _ => "application/octet-stream",
            };
            return ([(header::CONTENT_TYPE, mime)], bytes).into_response();
        }
    }
    let label: String = path
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || "/._-".contains(*c))
        .collect();
    let svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"256\" height=\"256\">\
         <rect width=\"256\" height=\"256\" fill=\"#ddd\"/>\
         <text x=\"128\" y=\"132\" font-size=\"12\" text-anchor=\"middle\">{label}</text></svg>"
    );
    ([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response()
}
