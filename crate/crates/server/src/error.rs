use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use wheelhouse_core::autograder::GradeError;
use wheelhouse_core::events::IngestError;
use wheelhouse_core::feedback::FeedbackError;
use wheelhouse_core::session_store::StoreError;
use wheelhouse_core::teaching::TeachingError;

use crate::executor::ExecutorError;

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<String>>,
}

impl ApiError {
    pub fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError { status, error: error.into(), fields: None }
    }

    pub fn bad_request(error: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error)
    }

    pub fn not_found(error: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, error)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(status = self.status.as_u16(), error = %self.error, "request failed");
        }
        (self.status, Json(self)).into_response()
    }
}

/// Unwraps a JSON body, turning extractor rejections into uniform 400s.
pub fn body<T>(payload: Result<axum::Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::not_found(e.to_string()),
            StoreError::InvalidId(_) => ApiError::bad_request(e.to_string()),
            StoreError::StorageUnavailable(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
            StoreError::Corrupt { .. } => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl From<TeachingError> for ApiError {
    fn from(e: TeachingError) -> Self {
        match e {
            TeachingError::EmptyQuery => ApiError::bad_request(e.to_string()),
            TeachingError::SessionNotFound(_) | TeachingError::LessonNotFound(_) => ApiError::not_found(e.to_string()),
            TeachingError::SessionLessonMismatch { .. } => ApiError::bad_request(e.to_string()),
            TeachingError::Storage(inner) => inner.into(),
        }
    }
}

impl From<GradeError> for ApiError {
    fn from(e: GradeError) -> Self {
        match e {
            GradeError::SessionNotFound(_) | GradeError::LessonNotFound(_) => ApiError::not_found(e.to_string()),
            GradeError::UnknownCheckpoint(_) => ApiError::bad_request(e.to_string()),
            GradeError::GatewayFailure(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
            GradeError::Storage(inner) => inner.into(),
        }
    }
}

impl From<FeedbackError> for ApiError {
    fn from(e: FeedbackError) -> Self {
        match e {
            FeedbackError::EmptyQuestion => ApiError::bad_request(e.to_string()),
            FeedbackError::ConversationNotFound(_) => ApiError::not_found(e.to_string()),
            FeedbackError::LessonMismatch { .. } => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            FeedbackError::GatewayFailure(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
            FeedbackError::Storage(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            FeedbackError::ConversationStorage(inner) => inner.into(),
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::SchemaRejection(fields) => ApiError {
                status: StatusCode::BAD_REQUEST,
                error: "event rejected".into(),
                fields: Some(fields),
            },
            IngestError::Storage(inner) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, inner.to_string()),
        }
    }
}

impl From<ExecutorError> for ApiError {
    fn from(e: ExecutorError) -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string())
    }
}
