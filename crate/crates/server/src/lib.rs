//! HTTP service over an [`EdStore`] for the description annotation workflow.
//!
//! Writes go through one connection guarded by a mutex, so they are applied
//! one at a time and acknowledged only after commit. Reads use a separate
//! read-only connection that sees committed snapshots.

use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rehearsal_core::ed::api::{ApiErrorBody, ClassQuery, ExportQuery};
use rehearsal_core::ed::{AnnotationRequest, EdStore, StoreError};
use rehearsal_core::text::store as ed_file;
use rehearsal_core::ClassId;
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

/// Header carrying the optional shared token.
pub const TOKEN_HEADER: &str = "x-annotation-token";

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot open store {path}: {source}")]
    Store { path: PathBuf, source: StoreError },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Static assets served under `/ui/`.
    pub static_dir: Option<PathBuf>,
    /// When set, every route except `/health` requires this token.
    pub token: Option<String>,
}

#[derive(Clone)]
struct AppState {
    writer: Arc<Mutex<EdStore>>,
    reader: Arc<Mutex<EdStore>>,
}

impl AppState {
    fn open(path: &Path) -> Result<Self, ServerError> {
        let wrap = |source| ServerError::Store {
            path: path.to_path_buf(),
            source,
        };
        // the writer creates the schema before the reader attaches
        let writer = EdStore::open(path).map_err(wrap)?;
        let reader = EdStore::open_read_only(path).map_err(wrap)?;
        Ok(Self {
            writer: Arc::new(Mutex::new(writer)),
            reader: Arc::new(Mutex::new(reader)),
        })
    }

    async fn read<T: Send + 'static>(
        &self,
        f: impl FnOnce(&EdStore) -> Result<T, StoreError> + Send + 'static,
    ) -> Result<T, ApiError> {
        let store = self.reader.clone();
        tokio::task::spawn_blocking(move || f(&store.lock().unwrap_or_else(|p| p.into_inner())))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(ApiError::from)
    }

    async fn write<T: Send + 'static>(
        &self,
        f: impl FnOnce(&mut EdStore) -> Result<T, StoreError> + Send + 'static,
    ) -> Result<T, ApiError> {
        let store = self.writer.clone();
        tokio::task::spawn_blocking(move || f(&mut store.lock().unwrap_or_else(|p| p.into_inner())))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(ApiError::from)
    }
}

/// JSON error response with a stable `kind` tag.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ApiErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, error: String) -> Self {
        Self {
            status,
            body: ApiErrorBody {
                error,
                kind: kind.into(),
                pending: Vec::new(),
            },
        }
    }

    fn internal(error: String) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", error)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "not_found", msg),
            StoreError::InvalidAnnotation(_) | StoreError::Text(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_annotation", msg)
            }
            StoreError::Incomplete { pending } => {
                let mut err = Self::new(StatusCode::CONFLICT, "incomplete", msg);
                err.body.pending = pending;
                err
            }
            StoreError::Sqlite(_) | StoreError::Corrupt(_) => {
                log::error!("store failure: {msg}");
                Self::internal(msg)
            }
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        // syntax errors are 400, well-formed bodies with the wrong shape 422
        let status = e.status();
        let kind = if status == StatusCode::UNPROCESSABLE_ENTITY {
            "invalid_annotation"
        } else {
            "bad_request"
        };
        Self::new(status, kind, e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// `Json` extractor whose rejections use [`ApiError`].
struct ApiJson<T>(T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Ok(Self(Json::<T>::from_request(req, state).await?.0))
    }
}

async fn health() -> &'static str {
    "ok"
}

async fn list_classes(
    State(state): State<AppState>,
    query: Result<Query<ClassQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let classes = state.read(move |s| s.list_classes(q.status)).await?;
    Ok(Json(classes).into_response())
}

async fn candidates(State(state): State<AppState>, UrlPath(id): UrlPath<ClassId>) -> Result<Response, ApiError> {
    let detail = state.read(move |s| s.detail(id)).await?;
    Ok(Json(detail).into_response())
}

async fn annotate(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<ClassId>,
    ApiJson(req): ApiJson<AnnotationRequest>,
) -> Result<Response, ApiError> {
    let resp = state.write(move |s| s.submit(id, &req)).await?;
    if resp.conflict {
        log::warn!("class {id}: stale submission overwrote version {}", resp.version - 1);
    }
    Ok(Json(resp).into_response())
}

async fn export(
    State(state): State<AppState>,
    query: Result<Query<ExportQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let eds = state.read(move |s| s.export(q.partial)).await?;
    Ok((
        [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
        ed_file::render(&eds),
    )
        .into_response())
}

async fn require_token(State(token): State<Arc<str>>, headers: HeaderMap, req: Request, next: Next) -> Response {
    match headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok()) {
        Some(t) if t == &*token => next.run(req).await,
        _ => ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or wrong token".into(),
        )
        .into_response(),
    }
}

/// Builds the router over the store file at `path`, creating it if absent.
pub fn router(path: &Path, cfg: &ServerConfig) -> Result<Router, ServerError> {
    let state = AppState::open(path)?;
    let mut api = Router::new()
        .route("/classes", get(list_classes))
        .route("/classes/{id}/candidates", get(candidates))
        .route("/classes/{id}/annotation", post(annotate))
        .route("/export", get(export))
        .with_state(state);
    if let Some(token) = &cfg.token {
        api = api.layer(middleware::from_fn_with_state(
            Arc::<str>::from(token.as_str()),
            require_token,
        ));
    }
    let mut app = Router::new().route("/health", get(health)).merge(api);
    if let Some(dir) = &cfg.static_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    Ok(app)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    path: &Path,
    cfg: &ServerConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    let app = router(path, cfg)?;
    log::info!("annotation service on http://{}", listener.local_addr()?);
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}
