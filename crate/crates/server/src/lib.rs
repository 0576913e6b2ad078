//! Backend for the pairwise judgment study.
//!
//! Each scene directory holds one original image and the segmentations to be
//! compared. Participants open sessions that walk every unordered pair once;
//! each click is appended to the scene's choice log, and the choice matrix and
//! Elo ratings are always the replay of that log.

mod scene;
mod session;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use labeldist::elo::{elo_distance_matrix, write_choice_log, ChoiceMatrix};
use labeldist::stats::{ols_fit, RegressionReport};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub use scene::{load_scenes, load_segmentation, Scene, LOG_FILE};
pub use session::{Answer, ChoiceError, QueuedPair, Session};

use scene::SceneState;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("{0}")]
    Scene(String),
    #[error(transparent)]
    Core(#[from] labeldist::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub scenes_dir: PathBuf,
    /// UI bundle served under `/static/`.
    pub static_dir: Option<PathBuf>,
    /// Base seed for sessions created without one.
    pub seed: u64,
    pub addr: SocketAddr,
}

impl ServerConfig {
    pub fn new(scenes_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenes_dir: scenes_dir.into(),
            static_dir: None,
            seed: 0,
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
        }
    }
}

pub struct AppState {
    scenes: BTreeMap<String, SceneState>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    created: AtomicU64,
    seed: u64,
    scenes_dir: PathBuf,
    static_dir: Option<PathBuf>,
}

impl AppState {
    /// Loads every scene and replays its choice log.
    pub fn load(config: &ServerConfig) -> Result<Arc<Self>, ServerError> {
        let mut scenes = BTreeMap::new();
        for scene in load_scenes(&config.scenes_dir)? {
            log::info!(
                "scene `{}`: {} segmentations",
                scene.id,
                scene.segmentation_ids.len()
            );
            scenes.insert(scene.id.clone(), SceneState::new(scene)?);
        }
        Ok(Arc::new(Self {
            scenes,
            sessions: RwLock::new(HashMap::new()),
            created: AtomicU64::new(0),
            seed: config.seed,
            scenes_dir: config.scenes_dir.clone(),
            static_dir: config.static_dir.clone(),
        }))
    }

    pub fn scene_ids(&self) -> Vec<String> {
        self.scenes.keys().cloned().collect()
    }

    fn scene(&self, id: &str) -> Result<&SceneState, ApiError> {
        self.scenes
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown scene `{id}`")))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
    }

    /// Ratings, matrix and regressions for one scene as served by the results endpoint.
    pub fn results(&self, scene_id: &str) -> Option<SceneResults> {
        self.scenes.get(scene_id).map(results_of)
    }
}

#[derive(Debug)]
struct ApiError {
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

    fn internal(e: impl std::fmt::Display) -> Self {
        log::error!("{e}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Serialize)]
struct ImageRef {
    id: String,
    url: String,
}

fn segmentation_ref(scene: &Scene, idx: usize) -> ImageRef {
    ImageRef {
        id: scene.segmentation_ids[idx].clone(),
        url: scene.segmentation_url(idx),
    }
}

#[derive(Serialize)]
struct SceneSummary {
    id: String,
    original_url: String,
    segmentations: usize,
    pairs: usize,
}

async fn list_scenes(State(app): State<Arc<AppState>>) -> Json<Vec<SceneSummary>> {
    Json(
        app.scenes
            .values()
            .map(|s| SceneSummary {
                id: s.scene.id.clone(),
                original_url: s.scene.original_url(),
                segmentations: s.scene.segmentation_ids.len(),
                pairs: s.scene.pair_count(),
            })
            .collect(),
    )
}

async fn get_scene(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let scene = &app.scene(&id)?.scene;
    let segmentations: Vec<ImageRef> = (0..scene.segmentation_ids.len())
        .map(|i| segmentation_ref(scene, i))
        .collect();
    Ok(Json(json!({
        "id": scene.id,
        "original": { "file": scene.original, "url": scene.original_url() },
        "segmentations": segmentations,
        "pairs": scene.pair_count(),
    })))
}

#[derive(Deserialize)]
struct CreateSession {
    scene_id: String,
    seed: Option<u64>,
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let scene = &app.scene(&req.scene_id)?.scene;
    let n = app.created.fetch_add(1, Ordering::Relaxed);
    let seed = req.seed.unwrap_or_else(|| app.seed.wrapping_add(n));
    let id = format!("s{n}");
    let session = Session::new(id.clone(), scene.id.clone(), scene.segmentation_ids.len(), seed);
    let total = session.queue.len();
    app.sessions
        .write()
        .expect("session table lock")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": id, "scene_id": scene.id, "seed": seed, "total": total })),
    ))
}

async fn next_pair(
    State(app): State<Arc<AppState>>,
    Path(sid): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let session = app.session(&sid)?;
    let session = session.lock().expect("session lock");
    let scene = &app.scene(&session.scene_id)?.scene;
    let (answered, total) = (session.cursor(), session.queue.len());
    Ok(Json(match session.current() {
        None => json!({ "done": true, "answered": answered, "total": total }),
        Some((pair_id, pair)) => json!({
            "done": false,
            "pair_id": pair_id,
            "left": segmentation_ref(scene, pair.left),
            "right": segmentation_ref(scene, pair.right),
            "original_url": scene.original_url(),
            "answered": answered,
            "total": total,
        }),
    }))
}

#[derive(Deserialize)]
struct PostChoice {
    pair_id: usize,
    winner_id: String,
}

async fn record_choice(
    State(app): State<Arc<AppState>>,
    Path(sid): Path<String>,
    Json(req): Json<PostChoice>,
) -> ApiResult<Json<serde_json::Value>> {
    let session = app.session(&sid)?;
    let mut session = session.lock().expect("session lock");
    let state = app.scene(&session.scene_id)?;
    let scene = &state.scene;
    let answer = session
        .check(req.pair_id, scene.index_of(&req.winner_id))
        .map_err(|e| match e {
            ChoiceError::Stale { expected } => ApiError::new(
                StatusCode::CONFLICT,
                match expected {
                    Some(c) => format!("pair {} is not current; current pair is {c}", req.pair_id),
                    None => format!("session `{sid}` is complete"),
                },
            ),
            ChoiceError::NotInPair => ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("`{}` is not part of pair {}", req.winner_id, req.pair_id),
            ),
        })?;
    {
        let mut tally = state.tally.lock().expect("tally lock");
        tally
            .append(
                &scene.id,
                &scene.segmentation_ids[answer.winner],
                &scene.segmentation_ids[answer.loser],
            )
            .map_err(ApiError::internal)?;
    }
    session.commit(answer);
    Ok(Json(json!({
        "recorded": true,
        "answered": session.cursor(),
        "total": session.queue.len(),
        "done": session.is_done(),
    })))
}

/// Least-squares fit of one metric's pairwise distances against Elo rating gaps.
#[derive(Clone, Debug, Serialize)]
pub struct MetricRegression {
    pub metric: String,
    pub report: Option<RegressionReport>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SceneResults {
    pub scene_id: String,
    pub total_choices: u64,
    pub choice_matrix: ChoiceMatrix,
    pub ratings: BTreeMap<String, f64>,
    /// Best first.
    pub ranking: Vec<String>,
    pub regressions: Vec<MetricRegression>,
    pub regression_note: Option<String>,
}

fn results_of(state: &SceneState) -> SceneResults {
    let tally = state.tally.lock().expect("tally lock");
    let (matrix, ratings) = (tally.matrix.clone(), tally.ratings.clone());
    drop(tally);
    let elo = elo_distance_matrix(&ratings).upper_triangle();
    let (regressions, regression_note) = match state.metric_tables() {
        Ok(tables) => (
            tables
                .iter()
                .map(|t| match ols_fit(&t.upper_triangle(), &elo) {
                    Ok(report) => MetricRegression {
                        metric: t.metric.clone(),
                        report: Some(report),
                        note: None,
                    },
                    Err(e) => MetricRegression {
                        metric: t.metric.clone(),
                        report: None,
                        note: Some(e.to_string()),
                    },
                })
                .collect(),
            None,
        ),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    SceneResults {
        scene_id: state.scene.id.clone(),
        total_choices: matrix.total(),
        ranking: ratings.ranking(),
        ratings: ratings.ratings,
        choice_matrix: matrix,
        regressions,
        regression_note,
    }
}

async fn scene_results(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<SceneResults>> {
    let app2 = app.clone();
    app.scene(&id)?;
    let results = tokio::task::spawn_blocking(move || app2.results(&id))
        .await
        .map_err(ApiError::internal)?
        .expect("scene checked above");
    Ok(Json(results))
}

fn csv_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
}

async fn export_choices(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let tally = app.scene(&id)?.tally.lock().expect("tally lock");
    Ok(csv_response(write_choice_log(&tally.records)))
}

async fn export_matrix(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let tally = app.scene(&id)?.tally.lock().expect("tally lock");
    Ok(csv_response(tally.matrix.to_csv()))
}

pub fn router(app: Arc<AppState>) -> Router {
    let mut router = Router::new()
        .route("/api/scenes", get(list_scenes))
        .route("/api/scenes/{id}", get(get_scene))
        .route("/api/scenes/{id}/results", get(scene_results))
        .route("/api/scenes/{id}/choices.csv", get(export_choices))
        .route("/api/scenes/{id}/matrix.csv", get(export_matrix))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{sid}/next", get(next_pair))
        .route("/api/sessions/{sid}/choice", post(record_choice))
        .nest_service("/static/scenes", ServeDir::new(&app.scenes_dir));
    if let Some(dir) = &app.static_dir {
        router = router.nest_service("/static", ServeDir::new(dir));
    }
    router.with_state(app)
}

/// Serves on an already bound listener until the task is dropped.
pub async fn serve_on(listener: tokio::net::TcpListener, app: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(app)).await
}

pub async fn serve(config: ServerConfig) -> Result<(), ServerError> {
    let app = AppState::load(&config)?;
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    serve_on(listener, app).await?;
    Ok(())
}
