//! HTTP API over the task registry and session orchestrator.
//!
//! | method | path | body | success |
//! |---|---|---|---|
//! | GET | `/api/health` | | `{"status":"ok"}` |
//! | GET | `/api/tasks` | | array of task specs |
//! | GET | `/api/tasks/{id}` | | task spec |
//! | POST | `/api/tasks` | task spec | 201, stored spec |
//! | POST | `/api/sessions` | `{task_id, text, language?, domain?}` | 201, session resource |
//! | GET | `/api/sessions/{id}` | | session resource |
//! | POST | `/api/sessions/{id}/rationale` | | `{session_id, rationale}` |
//! | POST | `/api/sessions/{id}/feedback` | `{feedback}` | session resource |
//! | GET | `/api/sessions/{id}/standoff` | | `text/plain` brat standoff |
//!
//! Errors are `{code, message, violations?, session_id?}` with `code` one of
//! [`ErrorCode::ALL`].

mod error;

use std::future::{Future, IntoFuture};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tracing::{info, warn};

use xnlp_core::export::to_brat_standoff;
use xnlp_core::gateway::{BackendConfig, Gateway, GatewayError};
use xnlp_core::prompt::UserRequest;
use xnlp_core::registry::{load_builtin_catalog, RegistryError, TaskRegistry, TaskSpec};
use xnlp_core::session::{
    Orchestrator, PipelineConfig, SessionError, SessionResource, SessionStore, DEFAULT_TTL,
};

pub use error::{ApiError, ErrorBody, ErrorCode};

pub const MAX_BODY_BYTES: usize = 64 * 1024;
pub const DEFAULT_PORT: u16 = 8080;
pub const SHUTDOWN_GRACE: Duration = Duration::from_secs(10);
const SWEEP_EVERY: Duration = Duration::from_secs(600);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    pub backend: BackendConfig,
    /// TOML file holding user-defined tasks; created on first registration.
    pub catalog: Option<PathBuf>,
    /// Directory for session files; sessions stay in memory when absent.
    pub session_store: Option<PathBuf>,
    pub session_ttl: Duration,
    pub cors_origin: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            addr: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            backend: BackendConfig::default(),
            catalog: None,
            session_store: None,
            session_ttl: DEFAULT_TTL,
            cors_origin: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] SessionError),
    #[error("invalid CORS origin `{0}`")]
    Cors(String),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: SocketAddr, message: String },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct AppState {
    orchestrator: Arc<Orchestrator>,
}

impl AppState {
    pub fn new(orchestrator: Orchestrator) -> Self {
        AppState {
            orchestrator: Arc::new(orchestrator),
        }
    }

    pub fn from_config(cfg: &ServerConfig) -> Result<Self, StartupError> {
        let builtin = load_builtin_catalog()?;
        let registry = match &cfg.catalog {
            Some(path) => TaskRegistry::with_user_file(builtin, path.clone())?,
            None => TaskRegistry::new(builtin),
        };
        let gateway = Gateway::from_config(&cfg.backend)?;
        let store = match &cfg.session_store {
            Some(dir) => SessionStore::persistent(dir, cfg.session_ttl)?,
            None => SessionStore::in_memory(cfg.session_ttl),
        };
        Ok(Self::new(Orchestrator::new(
            registry,
            gateway,
            store,
            PipelineConfig::default(),
        )))
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orchestrator
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub task_id: String,
    pub text: String,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub feedback: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RationaleResponse {
    pub session_id: String,
    pub rationale: String,
}

/// The API router, without CORS.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/tasks", get(list_tasks).post(create_task))
        .route("/api/tasks/{id}", get(get_task))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/rationale", post(rationale))
        .route("/api/sessions/{id}/feedback", post(feedback))
        .route("/api/sessions/{id}/standoff", get(standoff))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

pub fn cors_layer(origin: &str) -> Result<CorsLayer, StartupError> {
    let allow = if origin.trim() == "*" {
        AllowOrigin::any()
    } else {
        let value = HeaderValue::from_str(origin.trim()).map_err(|_| StartupError::Cors(origin.into()))?;
        AllowOrigin::list([value])
    };
    Ok(CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]))
}

pub fn app(state: AppState, cors_origin: Option<&str>) -> Result<Router, StartupError> {
    let mut app = router(state);
    if let Some(origin) = cors_origin {
        app = app.layer(cors_layer(origin)?);
    }
    Ok(app)
}

/// Binds `cfg.addr` and serves until `shutdown` resolves, then drains
/// in-flight requests for at most [`SHUTDOWN_GRACE`].
pub async fn serve(cfg: ServerConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), StartupError> {
    let state = AppState::from_config(&cfg)?;
    let app = app(state.clone(), cfg.cors_origin.as_deref())?;
    let listener = TcpListener::bind(cfg.addr).await.map_err(|e| StartupError::Bind {
        addr: cfg.addr,
        message: e.to_string(),
    })?;
    info!(addr = %listener.local_addr()?, "listening");
    serve_on(listener, app, state, shutdown).await
}

pub async fn serve_on(
    listener: TcpListener,
    app: Router,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), StartupError> {
    let sweeper = tokio::spawn(async move {
        let mut tick = tokio::time::interval(SWEEP_EVERY);
        loop {
            tick.tick().await;
            let n = state.orchestrator.store().sweep().await;
            if n > 0 {
                info!(expired = n, "swept sessions");
            }
        }
    });
    let (stopping_tx, stopping_rx) = tokio::sync::oneshot::channel::<()>();
    let signal = async move {
        shutdown.await;
        let _ = stopping_tx.send(());
    };
    let server = axum::serve(listener, app).with_graceful_shutdown(signal).into_future();
    tokio::pin!(server);
    let result = tokio::select! {
        r = &mut server => r,
        _ = stopping_rx => {
            info!("shutting down");
            match tokio::time::timeout(SHUTDOWN_GRACE, &mut server).await {
                Ok(r) => r,
                Err(_) => {
                    warn!("in-flight requests still running after grace period; exiting");
                    Ok(())
                }
            }
        }
    };
    sweeper.abort();
    result.map_err(StartupError::Io)
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn termination_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>, malformed: ErrorCode) -> Result<T, ApiError> {
    match payload {
        Ok(Json(v)) => Ok(v),
        Err(r) if r.status() == StatusCode::PAYLOAD_TOO_LARGE => Err(ApiError::too_large(format!(
            "request body exceeds {MAX_BODY_BYTES} bytes"
        ))),
        Err(r) => {
            let status = match malformed {
                ErrorCode::ValidationFailed => StatusCode::UNPROCESSABLE_ENTITY,
                _ => StatusCode::BAD_REQUEST,
            };
            Err(ApiError::new(status, malformed, r.body_text()))
        }
    }
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
    })
}

async fn list_tasks(State(s): State<AppState>) -> Json<Vec<TaskSpec>> {
    Json(s.orchestrator.registry().list())
}

async fn get_task(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<TaskSpec>, ApiError> {
    s.orchestrator
        .registry()
        .get(&id)
        .map(Json)
        .ok_or_else(|| RegistryError::NotFound(id).into())
}

async fn create_task(
    State(s): State<AppState>,
    payload: Result<Json<TaskSpec>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let spec = body(payload, ErrorCode::InvalidTaskSpec)?;
    let registry = s.orchestrator.registry().clone();
    let stored = tokio::task::spawn_blocking(move || registry.register(spec))
        .await
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, ErrorCode::BackendUnavailable, e.to_string()))??;
    info!(task = %stored.id, "task registered");
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn create_session(
    State(s): State<AppState>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let req = body(payload, ErrorCode::ValidationFailed)?;
    let session = s
        .orchestrator
        .start_session(UserRequest {
            task_id: req.task_id,
            input_text: req.text,
            language: req.language,
            domain: req.domain,
        })
        .await?;
    Ok((StatusCode::CREATED, Json(SessionResource::from(&session))))
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionResource>, ApiError> {
    let session = s.orchestrator.get_session(&id).await?;
    Ok(Json(SessionResource::from(&session)))
}

async fn rationale(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<RationaleResponse>, ApiError> {
    let session = s.orchestrator.request_rationale(&id).await?;
    Ok(Json(RationaleResponse {
        session_id: session.id,
        rationale: session.rationale.unwrap_or_default(),
    }))
}

async fn feedback(
    State(s): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Json<SessionResource>, ApiError> {
    let req = body(payload, ErrorCode::ValidationFailed)?;
    let session = s.orchestrator.apply_feedback(&id, &req.feedback).await?;
    Ok(Json(SessionResource::from(&session)))
}

async fn standoff(State(s): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let session = s.orchestrator.get_session(&id).await?;
    let doc = session
        .current
        .as_ref()
        .ok_or_else(|| ApiError::validation(format!("session `{id}` has no prediction")))?;
    let text = to_brat_standoff(doc).map_err(|e| ApiError::validation(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text))
}
