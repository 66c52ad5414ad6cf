use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use reefseg_core::Error as CoreError;
use serde::Serialize;
use serde_json::Value;

/// Error body shared by every endpoint: `{"error": ..., "details": [...]}`.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    pub details: Vec<Value>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                details: Vec::new(),
            },
        }
    }

    pub fn with_details(mut self, details: Vec<Value>) -> Self {
        self.body.details = details;
        self
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} {id} not found"))
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }

    /// Maps a core error raised while handling a client payload.
    pub fn from_core(status: StatusCode, e: &CoreError) -> Self {
        match e.root() {
            CoreError::Config(list) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid parameters")
                .with_details(list.iter().map(|s| Value::from(s.as_str())).collect()),
            CoreError::UncoveredLabels(labels) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "legend does not cover every label")
                    .with_details(labels.iter().map(|&l| Value::from(l)).collect())
            }
            CoreError::Io { .. } => Self::internal(e),
            _ => Self::new(status, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
