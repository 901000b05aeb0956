//! HTTP API over [`Service`].
//!
//! | method | path | body | response |
//! |--------|------|------|----------|
//! | POST | `/cases?name=` | raw image bytes | case document |
//! | GET | `/cases/{id}` | | case document |
//! | POST | `/cases/{id}/attributes` | `{"actor", "distribution"}` | updated case document |
//! | POST | `/search` | search query (`top_n`, `epsilon` optional) | search-result document |
//! | GET | `/schools?region=A,B` | | school-registry document |
//! | GET | `/health` | | health JSON |
//!
//! Errors are `{"error": kind, "message": text}` with a matching status.

use std::collections::BTreeSet;
use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use uniformid_core::schema::{encode_document, Document};
use uniformid_core::search::SearchQuery;
use uniformid_core::service::{PipelineConfig, Service};
use uniformid_core::{AttributeDistribution, Error, Result, SchoolRegistry};

pub const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

fn error_kind(err: &Error) -> (StatusCode, &'static str) {
    match err {
        Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        Error::Schema(_) => (StatusCode::UNPROCESSABLE_ENTITY, "schema"),
        Error::Contract(_) => (StatusCode::UNPROCESSABLE_ENTITY, "contract"),
        Error::Decode(_) => (StatusCode::UNPROCESSABLE_ENTITY, "decode"),
        Error::Config(_) => (StatusCode::UNPROCESSABLE_ENTITY, "config"),
        Error::Digest { .. } => (StatusCode::CONFLICT, "digest"),
        Error::StaleResult { .. } => (StatusCode::CONFLICT, "stale_result"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = error_kind(&self.0);
        let body = serde_json::json!({ "error": kind, "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult = std::result::Result<Response, ApiError>;

fn document<T: Document>(status: StatusCode, doc: &T) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], encode_document(doc)).into_response()
}

async fn blocking<T, F>(f: F) -> Result<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(Error::Training(format!("worker task failed: {e}"))))
}

#[derive(Deserialize)]
struct UploadParams {
    name: Option<String>,
}

async fn create_case(State(svc): State<Arc<Service>>, Query(p): Query<UploadParams>, body: Bytes) -> ApiResult {
    let image_ref = p.name.unwrap_or_else(|| "upload".into());
    let case = blocking(move || svc.run_pipeline(&body, &image_ref)).await?;
    Ok(document(StatusCode::CREATED, &case))
}

async fn get_case(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    Ok(document(StatusCode::OK, &svc.case(&id)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeEdit {
    actor: String,
    distribution: AttributeDistribution,
}

async fn edit_case(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(edit): Json<AttributeEdit>,
) -> ApiResult {
    let case = blocking(move || svc.edit_attributes(&id, edit.distribution, &edit.actor)).await?;
    Ok(document(StatusCode::OK, &case))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchRequest {
    distribution: AttributeDistribution,
    #[serde(default)]
    region_filter: Option<BTreeSet<String>>,
    #[serde(default)]
    max_mismatches: Option<usize>,
    top_n: Option<usize>,
    epsilon: Option<f64>,
}

async fn run_search(State(svc): State<Arc<Service>>, Json(req): Json<SearchRequest>) -> ApiResult {
    let defaults = &svc.config().search;
    let query = SearchQuery {
        distribution: req.distribution,
        region_filter: req.region_filter,
        max_mismatches: req.max_mismatches,
        top_n: req.top_n.unwrap_or(defaults.top_n),
        epsilon: req.epsilon.unwrap_or(defaults.epsilon),
    };
    let result = blocking(move || svc.search(&query)).await?;
    Ok(document(StatusCode::OK, &result))
}

#[derive(Deserialize)]
struct SchoolParams {
    region: Option<String>,
}

async fn list_schools(State(svc): State<Arc<Service>>, Query(p): Query<SchoolParams>) -> ApiResult {
    let regions: Option<BTreeSet<String>> = p
        .region
        .map(|r| r.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect());
    let schools = svc.schools(regions.as_ref());
    Ok(document(StatusCode::OK, &SchoolRegistry { schools }))
}

async fn health(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.health()).into_response()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/cases", post(create_case))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/attributes", post(edit_case))
        .route("/search", post(run_search))
        .route("/schools", get(list_schools))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(service)
}

pub async fn serve(
    service: Arc<Service>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Starts the service (verifying every model first), binds, prints
/// `listening on <addr>` and serves until ctrl-c.
pub(crate) fn serve_blocking(config: PipelineConfig, bind: Option<String>) -> Result<i32> {
    let bind = bind.unwrap_or_else(|| config.bind.clone());
    let service = Arc::new(Service::start(config)?);
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Config(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| Error::Config(format!("cannot bind {bind}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::Config(format!("cannot bind {bind}: {e}")))?;
        {
            use std::io::Write as _;
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "listening on {addr}");
            let _ = out.flush();
        }
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(service, listener, shutdown)
            .await
            .map_err(|e| Error::Config(format!("server failed: {e}")))
    })?;
    Ok(crate::EXIT_OK)
}
