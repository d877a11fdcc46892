//! HTTP front end for `biasspace-core`.
//!
//! Routes (all JSON):
//!
//! | method | path                   | body                  |
//! |--------|------------------------|-----------------------|
//! | GET    | `/health`              |                       |
//! | POST   | `/embeddings`          | `EmbeddingSource`     |
//! | POST   | `/subspace`            | `SubspaceRequest`     |
//! | POST   | `/debias`              | `DebiasRequest`       |
//! | POST   | `/eval/mac`            | `MacRequest`          |
//! | POST   | `/eval/eq`             | `EqRequest`           |
//! | POST   | `/validate-hypothesis` | `HypothesisRequest`   |
//! | POST   | `/report`              | `ReportRequest`       |
//!
//! Paths inside requests refer to the server's filesystem. Loaded embedding
//! sets are cached and reused until the file on disk changes.

mod cache;

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use biasspace_core::error::ErrorKind;
use biasspace_core::pipeline::{self, ErrorReport};
use biasspace_core::Error;
use serde::Serialize;
use tokio::net::TcpListener;

pub use cache::EmbeddingCache;

#[derive(Clone)]
pub struct AppState {
    cache: Arc<EmbeddingCache>,
}

impl AppState {
    pub fn new(max_cached: usize) -> Self {
        AppState {
            cache: Arc::new(EmbeddingCache::new(max_cached)),
        }
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl Default for AppState {
    fn default() -> Self {
        AppState::new(4)
    }
}

pub struct ApiError {
    status: StatusCode,
    report: ErrorReport,
}

pub fn status_for(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::Io => StatusCode::INTERNAL_SERVER_ERROR,
        ErrorKind::Validation => StatusCode::BAD_REQUEST,
        ErrorKind::Numerical => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let report = ErrorReport::from(&e);
        ApiError {
            status: status_for(report.kind),
            report,
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            report: ErrorReport {
                kind: ErrorKind::Validation,
                message: e.body_text(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.report)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Run CPU-bound work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> biasspace_core::Result<T> + Send + 'static,
    T: Serialize + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => Ok(Json(r?)),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            report: ErrorReport {
                kind: ErrorKind::Numerical,
                message: format!("worker failed: {e}"),
            },
        }),
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
    cached: usize,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok",
        version: env!("CARGO_PKG_VERSION"),
        cached: state.cache.len(),
    })
}

async fn load(
    State(state): State<AppState>,
    body: Result<Json<pipeline::EmbeddingSource>, JsonRejection>,
) -> ApiResult<pipeline::EmbeddingInfo> {
    let Json(source) = body?;
    blocking(move || Ok(state.cache.get(&source)?.info.clone())).await
}

async fn subspace(
    State(state): State<AppState>,
    body: Result<Json<pipeline::SubspaceRequest>, JsonRejection>,
) -> ApiResult<pipeline::SubspaceResponse> {
    let Json(req) = body?;
    blocking(move || {
        let e = state.cache.get(&req.embeddings)?;
        pipeline::run_subspace(&e.set, e.info.clone(), &req)
    })
    .await
}

async fn debias(
    State(state): State<AppState>,
    body: Result<Json<pipeline::DebiasRequest>, JsonRejection>,
) -> ApiResult<pipeline::DebiasResponse> {
    let Json(req) = body?;
    blocking(move || {
        let e = state.cache.get(&req.embeddings)?;
        pipeline::run_debias(&e.set, e.info.clone(), &req)
    })
    .await
}

async fn eval_mac(
    State(state): State<AppState>,
    body: Result<Json<pipeline::MacRequest>, JsonRejection>,
) -> ApiResult<pipeline::MacResponse> {
    let Json(req) = body?;
    blocking(move || {
        let e = state.cache.get(&req.embeddings)?;
        let base = req.baseline.as_ref().map(|b| state.cache.get(b)).transpose()?;
        pipeline::run_mac(&e.set, base.as_ref().map(|b| &b.set), &req)
    })
    .await
}

async fn eval_eq(body: Result<Json<pipeline::EqRequest>, JsonRejection>) -> ApiResult<pipeline::EqResponse> {
    let Json(req) = body?;
    Ok(Json(pipeline::run_eq(&req)?))
}

async fn hypothesis(
    State(state): State<AppState>,
    body: Result<Json<pipeline::HypothesisRequest>, JsonRejection>,
) -> ApiResult<pipeline::HypothesisResponse> {
    let Json(req) = body?;
    blocking(move || {
        let e = state.cache.get(&req.embeddings)?;
        pipeline::run_hypothesis(&e.set, &req)
    })
    .await
}

async fn report(
    State(state): State<AppState>,
    body: Result<Json<pipeline::ReportRequest>, JsonRejection>,
) -> ApiResult<pipeline::ReportResponse> {
    let Json(req) = body?;
    blocking(move || {
        let e = state.cache.get(&req.embeddings)?;
        // Compared sets are read once and not cached so they do not evict the input.
        pipeline::run_report(&e.set, &req, |source| pipeline::prepare_embeddings(source).map(|(s, _)| s))
    })
    .await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/embeddings", post(load))
        .route("/subspace", post(subspace))
        .route("/debias", post(debias))
        .route("/eval/mac", post(eval_mac))
        .route("/eval/eq", post(eval_eq))
        .route("/validate-hypothesis", post(hypothesis))
        .route("/report", post(report))
        .with_state(state)
}

/// Serve until `shutdown` resolves.
pub async fn serve<F>(listener: TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "listening");
    }
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
