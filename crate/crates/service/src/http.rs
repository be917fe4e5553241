use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hintloop_core::ratersim::{AssistMode, RaterKind};
use serde::{Deserialize, Serialize};

use crate::service::{ReviewService, ReviewTask, ServiceError, SubmitRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTaskResponse {
    pub task: Option<ReviewTask>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type Shared = State<Arc<ReviewService>>;

fn param<'a>(query: &'a HashMap<String, String>, name: &str) -> Result<&'a str, ServiceError> {
    query
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| ServiceError::InvalidParameter(format!("missing query parameter {name:?}")))
}

fn parse_pool(s: &str) -> Result<RaterKind, ServiceError> {
    match s {
        "expert" => Ok(RaterKind::Expert),
        "generalist" => Ok(RaterKind::Generalist),
        other => Err(ServiceError::InvalidParameter(format!(
            "pool must be expert or generalist, got {other:?}"
        ))),
    }
}

async fn next_task(State(svc): Shared, Query(q): Query<HashMap<String, String>>) -> Result<Response, ServiceError> {
    let rater = param(&q, "rater")?;
    let pool = parse_pool(param(&q, "pool")?)?;
    let task = svc.next_task(rater, pool)?;
    Ok(Json(NextTaskResponse { task }).into_response())
}

async fn hints(
    State(svc): Shared,
    Path(video_id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ServiceError> {
    let mode = match q.get("mode") {
        None => AssistMode::V1V2,
        Some(m) => AssistMode::parse(m)
            .ok_or_else(|| ServiceError::InvalidParameter(format!("mode must be none, v1 or v1_v2, got {m:?}")))?,
    };
    Ok(Json(svc.hints(&video_id, mode)?).into_response())
}

async fn submit(State(svc): Shared, Path(task_id): Path<String>, body: Bytes) -> Result<Response, ServiceError> {
    let request: SubmitRequest = serde_json::from_slice(&body)
        .map_err(|e| ServiceError::InvalidSubmission(format!("malformed body: {e}")))?;
    Ok(Json(svc.submit(&task_id, request)?).into_response())
}

async fn metrics(State(svc): Shared, Path(experiment): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(svc.metrics(&experiment)?).into_response())
}

async fn media(State(svc): Shared, Path(video_id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(svc.media(&video_id)?).into_response())
}

async fn fallback(uri: axum::http::Uri) -> ServiceError {
    ServiceError::NoRoute(uri.path().to_string())
}

pub fn router(service: Arc<ReviewService>) -> Router {
    Router::new()
        .route("/v1/tasks/next", get(next_task))
        .route("/v1/tasks/{task_id}/submit", post(submit))
        .route("/v1/videos/{video_id}/hints", get(hints))
        .route("/v1/videos/{video_id}/media", get(media))
        .route("/v1/metrics/{experiment}", get(metrics))
        .fallback(fallback)
        .with_state(service)
}

/// Serves until ctrl-c.
pub async fn serve(service: Arc<ReviewService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
