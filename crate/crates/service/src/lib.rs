//! HTTP API over interactive translation sessions.
//!
//! Every session lives behind its own lock, so requests on one session are
//! applied one at a time while different sessions run in parallel. With a
//! transcript directory configured, each session is written to
//! `<dir>/<id>.jsonl` and rebuilt from it on first access after a restart.

mod error;
mod origins;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use imt_core::decoding::Token;
use imt_core::model::TranslationModel;
use imt_core::session::{read_transcript, transcript_path, Session, SessionConfig, TranscriptRecord};
use serde::{Deserialize, Serialize};

pub use error::ApiError;
pub use origins::{display_origins, DisplayOrigin};

/// Loaded checkpoints by name.
#[derive(Clone, Default)]
pub struct ModelRegistry {
    models: HashMap<String, Arc<TranslationModel>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, model: TranslationModel) {
        self.models.insert(name.into(), Arc::new(model));
    }

    /// Loads the bundle in `dir` under the directory's file name.
    pub fn load(&mut self, dir: &Path) -> imt_core::Result<String> {
        let model = TranslationModel::load(dir)?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "default".into());
        self.insert(name.clone(), model);
        Ok(name)
    }

    pub fn get(&self, name: &str) -> Option<&Arc<TranslationModel>> {
        self.models.get(name)
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.models.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub memory: bool,
    pub online_learning: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            memory: true,
            online_learning: true,
        }
    }
}

/// Session metadata, fixed at creation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub checkpoint: String,
    pub toggles: Toggles,
}

struct Entry {
    meta: ApiSession,
    session: Session,
}

pub struct AppState {
    models: ModelRegistry,
    defaults: SessionConfig,
    transcripts: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
}

impl AppState {
    /// `defaults` supplies everything but the toggles for new sessions.
    pub fn new(models: ModelRegistry, defaults: SessionConfig, transcripts: Option<PathBuf>) -> Self {
        Self {
            models,
            defaults,
            transcripts,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    fn meta_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.meta.json"))
    }

    fn lookup(&self, id: &str) -> Result<Arc<Mutex<Entry>>, ApiError> {
        if let Some(e) = self.sessions.read().unwrap().get(id) {
            return Ok(e.clone());
        }
        let restored = self.restore(id)?;
        let mut map = self.sessions.write().unwrap();
        Ok(map.entry(id.to_string()).or_insert(restored).clone())
    }

    /// Rebuilds a session from its transcript on disk.
    fn restore(&self, id: &str) -> Result<Arc<Mutex<Entry>>, ApiError> {
        let unknown = || ApiError::unknown_session(id);
        let dir = self.transcripts.as_ref().ok_or_else(unknown)?;
        if id.contains(['/', '\\', '.']) {
            return Err(unknown());
        }
        let meta_text = std::fs::read_to_string(Self::meta_path(dir, id)).map_err(|_| unknown())?;
        let meta: ApiSession = serde_json::from_str(&meta_text).map_err(ApiError::internal)?;
        let model = self
            .models
            .get(&meta.checkpoint)
            .ok_or_else(|| ApiError::unknown_checkpoint(&meta.checkpoint))?
            .clone();
        let path = transcript_path(dir, id);
        let records = read_transcript(&path)?;
        let session = Session::replay(model, &records)?.with_transcript(&path)?;
        log::info!("restored session {id} from {}", path.display());
        Ok(Arc::new(Mutex::new(Entry { meta, session })))
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/translate", post(translate))
        .route("/sessions/{id}/rounds/{rid}/revise", post(revise))
        .route("/sessions/{id}/rounds/{rid}/accept", post(accept))
        .with_state(state)
}

/// [`router`] plus static files from `assets` for everything else.
pub fn router_with_assets(state: Shared, assets: Option<&Path>) -> Router {
    let app = router(state);
    match assets {
        Some(dir) if dir.is_dir() => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        _ => app,
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub checkpoint: String,
    #[serde(default)]
    pub toggles: Toggles,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

async fn create_session(State(app): State<Shared>, Json(req): Json<CreateSession>) -> Result<Json<Created>, ApiError> {
    let model = app
        .models
        .get(&req.checkpoint)
        .ok_or_else(|| ApiError::unknown_checkpoint(&req.checkpoint))?
        .clone();
    let config = SessionConfig {
        use_memory: req.toggles.memory,
        online_learning: req.toggles.online_learning,
        ..app.defaults.clone()
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let meta = ApiSession {
        session_id: id.clone(),
        created: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        checkpoint: req.checkpoint,
        toggles: req.toggles,
    };
    let mut session = Session::open_with_id(id.clone(), model, config)?;
    if let Some(dir) = &app.transcripts {
        std::fs::create_dir_all(dir).map_err(ApiError::internal)?;
        std::fs::write(AppState::meta_path(dir, &id), serde_json::to_string(&meta).map_err(ApiError::internal)?)
            .map_err(ApiError::internal)?;
        session = session.with_transcript(&transcript_path(dir, &id))?;
    }
    app.sessions
        .write()
        .unwrap()
        .insert(id.clone(), Arc::new(Mutex::new(Entry { meta, session })));
    log::info!("opened session {id}");
    Ok(Json(Created { session_id: id }))
}

/// Runs `f` on the session off the async workers, holding its lock.
async fn with_session<T, F>(app: Shared, id: String, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Entry) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        let entry = app.lookup(&id)?;
        let mut guard = entry.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    })
    .await
    .map_err(ApiError::internal)?
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionInfo {
    #[serde(flatten)]
    pub meta: ApiSession,
    pub rounds: usize,
    pub revisions: u64,
    pub memory_items: usize,
}

async fn get_session(State(app): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionInfo>, ApiError> {
    with_session(app, id, |e| {
        Ok(Json(SessionInfo {
            meta: e.meta.clone(),
            rounds: e.session.rounds().len(),
            revisions: e.session.revision_count(),
            memory_items: e.session.memory().len(),
        }))
    })
    .await
}

async fn history(State(app): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<Vec<TranscriptRecord>>, ApiError> {
    with_session(app, id, |e| Ok(Json(e.session.transcript().to_vec()))).await
}

#[derive(Debug, Deserialize)]
pub struct TranslateRequest {
    pub source: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Hypothesis {
    pub round_id: u64,
    pub tokens: Vec<String>,
    pub token_origins: Vec<DisplayOrigin>,
}

fn hypothesis(session: &Session, round: u64, previous: Option<&[Token]>, current: &[Token]) -> Hypothesis {
    let shown: Vec<Token> = current.iter().filter(|t| !t.is_spacing()).cloned().collect();
    let previous: Option<Vec<Token>> = previous.map(|p| p.iter().filter(|t| !t.is_spacing()).cloned().collect());
    Hypothesis {
        round_id: round,
        tokens: session.render_tokens(&shown),
        token_origins: display_origins(previous.as_deref(), &shown),
    }
}

async fn translate(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<TranslateRequest>,
) -> Result<Json<Hypothesis>, ApiError> {
    with_session(app, id, move |e| {
        let round = e.session.translate(&req.source)?.clone();
        Ok(Json(hypothesis(&e.session, round.id, None, &round.current)))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct ReviseRequest {
    pub position: usize,
    /// Empty deletes the word.
    #[serde(default)]
    pub new_surface: String,
    /// Insert before `position` instead of replacing.
    #[serde(default)]
    pub insert: bool,
}

async fn revise(
    State(app): State<Shared>,
    UrlPath((id, rid)): UrlPath<(String, u64)>,
    Json(req): Json<ReviseRequest>,
) -> Result<Json<Hypothesis>, ApiError> {
    with_session(app, id, move |e| {
        let round = e.session.revise(rid, req.position, &req.new_surface, req.insert)?.clone();
        Ok(Json(hypothesis(&e.session, rid, Some(round.previous()), &round.current)))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Accepted {
    pub adapted: bool,
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
}

async fn accept(State(app): State<Shared>, UrlPath((id, rid)): UrlPath<(String, u64)>) -> Result<Json<Accepted>, ApiError> {
    with_session(app, id, move |e| {
        let out = e.session.accept(rid)?;
        Ok(Json(Accepted {
            adapted: out.loss_before.is_some(),
            loss_before: out.loss_before,
            loss_after: out.loss_after,
        }))
    })
    .await
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: AppState, addr: std::net::SocketAddr, assets: Option<&Path>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router_with_assets(Arc::new(state), assets)).await
}
