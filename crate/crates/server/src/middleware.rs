//! Bearer auth and request logging.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use wheelhouse_core::domain::SessionKey;

use crate::error::ApiError;

/// Every route except `/health` needs the bearer token.
pub async fn require_token(State(token): State<Arc<str>>, request: Request, next: Next) -> Response {
    if request.uri().path() == "/health" {
        return next.run(request).await;
    }
    let presented = request
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match presented {
        Some(t) if t.as_bytes() == token.as_bytes() => next.run(request).await,
        _ => ApiError::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token").into_response(),
    }
}

/// Session keys embed the user id; logged paths keep only the lesson.
pub fn redact_path(path: &str) -> String {
    path.split('/')
        .map(|segment| match SessionKey::parse(segment) {
            Ok(key) => format!("session_~_{}", key.lesson_id()),
            Err(_) if segment.starts_with("session_") => "session_~".to_string(),
            Err(_) => segment.to_string(),
        })
        .collect::<Vec<_>>()
        .join("/")
}

static REQUEST_IDS: AtomicU64 = AtomicU64::new(1);

pub async fn log_requests(State(service): State<&'static str>, request: Request, next: Next) -> Response {
    let id = REQUEST_IDS.fetch_add(1, Ordering::Relaxed);
    let method = request.method().clone();
    let path = redact_path(request.uri().path());
    let started = Instant::now();
    let response = next.run(request).await;
    tracing::info!(
        request_id = id,
        service,
        method = %method,
        path = %path,
        status = response.status().as_u16(),
        elapsed_ms = started.elapsed().as_millis() as u64,
        "request"
    );
    response
}
