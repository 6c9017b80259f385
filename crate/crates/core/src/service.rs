//! Read-only JSON API over a [`GraphStore`].

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use crate::error::{Error, Result};
use crate::store::{GraphStore, SearchHit};

/// JSON Schema for every response body, keyed under `$defs`.
pub const API_SCHEMA: &str = include_str!("../schema/api.schema.json");

pub const DEFAULT_SEARCH_LIMIT: usize = 20;
pub const DEFAULT_NEIGHBOR_LIMIT: usize = 25;
pub const MAX_LIMIT: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub query: String,
    pub results: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: code.into(),
                message: message.into(),
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            Error::StoreClosed => Self::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;
type Shared = Arc<GraphStore>;

#[derive(Debug, Deserialize)]
struct SearchParams {
    #[serde(default)]
    q: String,
    limit: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct NeighborParams {
    limit: Option<usize>,
    relation: Option<String>,
}

fn limit(requested: Option<usize>, default: usize) -> std::result::Result<usize, ApiError> {
    match requested.unwrap_or(default) {
        0 => Err(ApiError::bad_request("limit must be positive")),
        n if n > MAX_LIMIT => Err(ApiError::bad_request(format!("limit must be at most {MAX_LIMIT}"))),
        n => Ok(n),
    }
}

async fn search(
    State(store): State<Shared>,
    params: std::result::Result<Query<SearchParams>, QueryRejection>,
) -> ApiResult<SearchResponse> {
    let Query(p) = params?;
    let n = limit(p.limit, DEFAULT_SEARCH_LIMIT)?;
    Ok(Json(SearchResponse {
        results: store.search(&p.q, n)?,
        query: p.q,
    }))
}

async fn neighbors(
    State(store): State<Shared>,
    id: std::result::Result<Path<u64>, PathRejection>,
    params: std::result::Result<Query<NeighborParams>, QueryRejection>,
) -> ApiResult<crate::store::Neighborhood> {
    let Path(id) = id?;
    let Query(p) = params?;
    let n = limit(p.limit, DEFAULT_NEIGHBOR_LIMIT)?;
    Ok(Json(store.neighbors(id, n, p.relation.as_deref())?))
}

async fn node(
    State(store): State<Shared>,
    id: std::result::Result<Path<u64>, PathRejection>,
) -> ApiResult<crate::store::NodeDetails> {
    let Path(id) = id?;
    Ok(Json(store.node_details(id)?))
}

async fn stats(State(store): State<Shared>) -> ApiResult<crate::store::StoreStats> {
    Ok(Json(store.stats()?))
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// Which browser origins may call the API. `None` allows any origin.
#[derive(Debug, Clone, Default)]
pub struct CorsConfig {
    pub allowed_origin: Option<String>,
}

impl CorsConfig {
    fn layer(&self) -> Result<CorsLayer> {
        let layer = CorsLayer::new().allow_methods([axum::http::Method::GET]).allow_headers(Any);
        Ok(match &self.allowed_origin {
            None => layer.allow_origin(Any),
            Some(o) => layer.allow_origin(
                HeaderValue::from_str(o).map_err(|e| Error::InvariantViolation(format!("bad CORS origin {o:?}: {e}")))?,
            ),
        })
    }
}

pub fn router(store: Shared, cors: &CorsConfig) -> Result<Router> {
    Ok(Router::new()
        .route("/api/search", get(search))
        .route("/api/nodes/{id}/neighbors", get(neighbors))
        .route("/api/nodes/{id}", get(node))
        .route("/api/stats", get(stats))
        .route("/api/health", get(health))
        .fallback(not_found)
        .with_state(store)
        .layer(cors.layer()?))
}

/// A bound but not yet running service.
pub struct Server {
    listener: tokio::net::TcpListener,
    router: Router,
}

impl Server {
    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub async fn run(self) -> Result<()> {
        axum::serve(self.listener, self.router).await?;
        Ok(())
    }

    pub async fn run_until(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<()> {
        axum::serve(self.listener, self.router)
            .with_graceful_shutdown(shutdown)
            .await?;
        Ok(())
    }
}

/// Bind `address` (e.g. `127.0.0.1:8080`) for serving `store`.
pub async fn bind(store: Shared, address: &str, cors: &CorsConfig) -> Result<Server> {
    let router = router(store, cors)?;
    let listener = tokio::net::TcpListener::bind(address)
        .await
        .map_err(|source| Error::BindError {
            address: address.to_string(),
            source,
        })?;
    Ok(Server { listener, router })
}

/// Bind and serve until the process ends.
pub async fn serve(store: Shared, address: &str, cors: &CorsConfig) -> Result<()> {
    let server = bind(store, address, cors).await?;
    log::info!("serving on http://{}", server.local_addr()?);
    server.run().await
}

/// Run [`serve`] on a fresh multi-threaded runtime, blocking the caller.
pub fn serve_blocking(store: Shared, address: &str, cors: &CorsConfig) -> Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(store, address, cors))
}
