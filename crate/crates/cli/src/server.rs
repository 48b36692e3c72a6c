//! HTTP+JSON front end for [`SessionManager`].
//!
//! - `POST /sessions` creates a session
//! - `POST /sessions/{id}/responses` with `{"outcome": 0|1, "step"?: n}`
//! - `GET /sessions/{id}` returns the snapshot
//! - `GET /healthz`
//!
//! Errors are `{"code": ..., "message": ...}` with a matching status.

use std::sync::Arc;

use adoirt::Error;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::Value;

use crate::session::{Session, SessionManager};

#[derive(Debug, Serialize, PartialEq, Eq)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        match &self.0 {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::Validation(_) | Error::Domain(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            Error::Parse { .. } => (StatusCode::BAD_REQUEST, "bad_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{}", self.0);
        }
        let body = ErrorBody {
            code,
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/responses", post(submit_response))
        .fallback(not_found)
        .with_state(manager)
}

async fn healthz() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError(Error::NotFound("no such route".into()))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> adoirt::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::State(format!("request task failed: {e}"))))?
        .map_err(ApiError)
}

async fn create_session(State(m): State<Arc<SessionManager>>) -> ApiResult<(StatusCode, Json<Session>)> {
    let s = blocking(move || m.create()).await?;
    Ok((StatusCode::CREATED, Json(s)))
}

async fn get_session(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    Ok(Json(m.get(&id)?))
}

/// Parses `{"outcome": int, "step"?: int}` by hand so malformed bodies get
/// the same error shape as everything else.
fn parse_response_body(body: &[u8]) -> adoirt::Result<(i64, Option<usize>)> {
    let v: Value = serde_json::from_slice(body).map_err(|e| Error::parse("response body", e))?;
    let outcome = v
        .get("outcome")
        .ok_or_else(|| Error::Validation("missing field `outcome`".into()))?;
    let outcome = outcome
        .as_i64()
        .ok_or_else(|| Error::Validation(format!("outcome must be 0 or 1, got {outcome}")))?;
    let step = match v.get("step") {
        None | Some(Value::Null) => None,
        Some(s) => Some(
            s.as_u64()
                .ok_or_else(|| Error::Validation(format!("step must be a non-negative integer, got {s}")))?
                as usize,
        ),
    };
    Ok((outcome, step))
}

async fn submit_response(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Session>> {
    let (outcome, step) = parse_response_body(&body)?;
    let s = blocking(move || m.submit(&id, outcome, step)).await?;
    Ok(Json(s))
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(manager: Arc<SessionManager>, addr: &str) -> adoirt::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(manager))
        .await
        .map_err(|e| Error::State(format!("server stopped: {e}")))
}
