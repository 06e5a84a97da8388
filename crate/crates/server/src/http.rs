use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use stressmon_core::signal::RawWindow;
use tokio::net::TcpListener;

use crate::error::ServiceError;
use crate::service::{now_ms, Service};
use crate::types::{ExportKind, LabelResponse};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::BadWindow(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::UnknownSubject(_) | ServiceError::UnknownPrompt(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::PromptExpired(_) => StatusCode::GONE,
            ServiceError::AlreadyAnswered(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({ "error": self.kind(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    r.map(|Json(v)| v)
        .map_err(|e| ServiceError::BadRequest(e.body_text()))
}

#[derive(Debug, Default, Deserialize)]
struct Params {
    subject: Option<String>,
    kind: Option<String>,
    /// Honoured only when the service trusts client clocks.
    now_ms: Option<i64>,
}

fn clock(svc: &Service, p: &Params) -> i64 {
    match p.now_ms {
        Some(t) if svc.config().trust_client_clock => t,
        _ => now_ms(),
    }
}

fn required_subject(p: &Params) -> Result<&str, ServiceError> {
    p.subject
        .as_deref()
        .ok_or_else(|| ServiceError::BadRequest("missing `subject` parameter".into()))
}

async fn post_sample(
    State(svc): State<Arc<Service>>,
    Query(p): Query<Params>,
    window: Result<Json<RawWindow>, JsonRejection>,
) -> Result<Response, ServiceError> {
    let window = body(window)?;
    let now = clock(&svc, &p);
    let outcome = tokio::task::spawn_blocking(move || svc.ingest(&window, now))
        .await
        .map_err(|e| ServiceError::Storage(format!("ingest task failed: {e}")))??;
    Ok(Json(outcome).into_response())
}

async fn get_pending(
    State(svc): State<Arc<Service>>,
    Query(p): Query<Params>,
) -> Result<Response, ServiceError> {
    let prompts = svc.pending(required_subject(&p)?, clock(&svc, &p))?;
    Ok(Json(prompts).into_response())
}

async fn post_response(
    State(svc): State<Arc<Service>>,
    Query(p): Query<Params>,
    resp: Result<Json<LabelResponse>, JsonRejection>,
) -> Result<Response, ServiceError> {
    let resp = body(resp)?;
    let ack = svc.submit_response(&resp, clock(&svc, &p))?;
    Ok(Json(ack).into_response())
}

async fn get_export(
    State(svc): State<Arc<Service>>,
    Query(p): Query<Params>,
) -> Result<Response, ServiceError> {
    let kind: ExportKind = p
        .kind
        .as_deref()
        .unwrap_or("labeled")
        .parse()
        .map_err(ServiceError::BadRequest)?;
    let csv = svc.export(p.subject.as_deref(), kind);
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn get_stats(
    State(svc): State<Arc<Service>>,
    Query(p): Query<Params>,
) -> Result<Response, ServiceError> {
    let report = svc.stats(p.subject.as_deref(), clock(&svc, &p))?;
    Ok(Json(report).into_response())
}

async fn healthz(State(svc): State<Arc<Service>>) -> Response {
    Json(json!({ "status": "ok", "subjects": svc.subject_ids().len() })).into_response()
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/api/v1/samples", post(post_sample))
        .route("/api/v1/ema/pending", get(get_pending))
        .route("/api/v1/ema/response", post(post_response))
        .route("/api/v1/dataset/export", get(get_export))
        .route("/api/v1/stats", get(get_stats))
        .route("/healthz", get(healthz))
        .layer(axum::extract::DefaultBodyLimit::max(16 * 1024 * 1024))
        .with_state(svc)
}

/// Serves until `shutdown` resolves, then snapshots every subject.
pub async fn serve(
    svc: Arc<Service>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    axum::serve(listener, router(svc.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    tokio::task::spawn_blocking(move || svc.checkpoint())
        .await
        .map_err(|e| ServiceError::Storage(e.to_string()))?
}
