use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use crate::dsl::{Position, SpecError};
use crate::grid::GridError;
use crate::session::SessionError;

#[derive(Debug, Serialize)]
struct Body<'a> {
    code: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    location: Option<Position>,
}

/// Error response with body `{code, message, location?}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub location: Option<Position>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, code: code.into(), message: message.into(), location: None }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Body { code: &self.code, message: &self.message, location: self.location };
        (self.status, Json(body)).into_response()
    }
}

impl From<SpecError> for ApiError {
    fn from(e: SpecError) -> Self {
        let code = serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(str::to_string));
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: code.unwrap_or_else(|| "spec_error".into()),
            message: e.to_string(),
            location: Some(e.position),
        }
    }
}

impl From<GridError> for ApiError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::TooLarge { .. } => Self::new(StatusCode::PAYLOAD_TOO_LARGE, "grid_too_large", e.to_string()),
            GridError::OutOfRange { .. } => Self::not_found(e.to_string()),
            _ => Self::bad_request(e.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::UnknownStage(_) => Self::not_found(e.to_string()),
            SessionError::Io(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()),
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "session_error", e.to_string()),
        }
    }
}
