use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use aw_core::workflow::EngineError;

/// Error body returned by every endpoint and printed by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            message: message.into(),
            details: None,
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new("validation_failed", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new("forbidden", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new("not_found", message)
    }

    pub fn status(&self) -> StatusCode {
        match self.code.as_str() {
            "not_found" => StatusCode::NOT_FOUND,
            "validation_failed" => StatusCode::BAD_REQUEST,
            "qualification_denied" | "forbidden" => StatusCode::FORBIDDEN,
            "wrong_stage" | "duplicate" | "conflict" => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let details = match &e {
            EngineError::WrongStage { expected, actual } => Some(serde_json::json!({
                "expected": expected,
                "actual": actual,
            })),
            EngineError::QualificationDenied {
                worker,
                group,
                assignment,
            } => Some(serde_json::json!({
                "workerId": worker,
                "experimentGroup": group,
                "assignmentId": assignment,
            })),
            _ => None,
        };
        Self {
            code: e.code().to_owned(),
            message: e.to_string(),
            details,
        }
    }
}

impl From<aw_core::sim::SimError> for ApiError {
    fn from(e: aw_core::sim::SimError) -> Self {
        match e {
            aw_core::sim::SimError::UnknownPreset(name) => ApiError::not_found(format!("unknown preset `{name}`")),
            other => ApiError::validation(other.to_string()),
        }
    }
}

impl From<aw_core::eval::EvalError> for ApiError {
    fn from(e: aw_core::eval::EvalError) -> Self {
        ApiError::validation(e.to_string())
    }
}

impl From<aw_core::model::ModelError> for ApiError {
    fn from(e: aw_core::model::ModelError) -> Self {
        ApiError::validation(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}
