use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use xnlp_core::registry::RegistryError;
use xnlp_core::session::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    TaskNotFound,
    InvalidTaskSpec,
    SessionNotFound,
    BackendUnavailable,
    ValidationFailed,
    PayloadTooLarge,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 6] = [
        ErrorCode::TaskNotFound,
        ErrorCode::InvalidTaskSpec,
        ErrorCode::SessionNotFound,
        ErrorCode::BackendUnavailable,
        ErrorCode::ValidationFailed,
        ErrorCode::PayloadTooLarge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::TaskNotFound => "task-not-found",
            ErrorCode::InvalidTaskSpec => "invalid-task-spec",
            ErrorCode::SessionNotFound => "session-not-found",
            ErrorCode::BackendUnavailable => "backend-unavailable",
            ErrorCode::ValidationFailed => "validation-failed",
            ErrorCode::PayloadTooLarge => "payload-too-large",
        }
    }
}

/// Error body: `{code, message, violations?, session_id?}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{} ({}): {}", .status, .body.code.as_str(), .body.message)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                violations: Vec::new(),
                session_id: None,
            },
        }
    }

    pub fn code(&self) -> ErrorCode {
        self.body.code
    }

    fn with_violations(mut self, violations: Vec<String>) -> Self {
        self.body.violations = violations;
        self
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::ValidationFailed, message)
    }

    pub fn too_large(message: impl Into<String>) -> Self {
        Self::new(StatusCode::PAYLOAD_TOO_LARGE, ErrorCode::PayloadTooLarge, message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::TaskNotFound(_) => {
                ApiError::new(StatusCode::NOT_FOUND, ErrorCode::TaskNotFound, message)
            }
            SessionError::SessionNotFound(_) => {
                ApiError::new(StatusCode::NOT_FOUND, ErrorCode::SessionNotFound, message)
            }
            SessionError::Request(_) => ApiError::validation(message),
            SessionError::Backend { session_id, .. } => {
                let mut err =
                    ApiError::new(StatusCode::SERVICE_UNAVAILABLE, ErrorCode::BackendUnavailable, message);
                err.body.session_id = Some(session_id);
                err
            }
            SessionError::Store(_) => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, ErrorCode::BackendUnavailable, message)
            }
        }
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let message = e.to_string();
        match e {
            RegistryError::NotFound(_) => {
                ApiError::new(StatusCode::NOT_FOUND, ErrorCode::TaskNotFound, message)
            }
            RegistryError::Duplicate(_) | RegistryError::BuiltinCollision(_) => {
                ApiError::new(StatusCode::CONFLICT, ErrorCode::InvalidTaskSpec, message)
            }
            RegistryError::Invalid(v) | RegistryError::InvalidCatalogTask { violations: v, .. } => {
                ApiError::validation(message).with_violations(v)
            }
            RegistryError::CatalogFile { .. } => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, ErrorCode::BackendUnavailable, message)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
