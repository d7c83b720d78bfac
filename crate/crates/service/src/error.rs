use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use imt_core::Error;
use serde::{Deserialize, Serialize};

/// `{code, message}` body with a matching status.
#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id:?}"))
    }

    pub fn unknown_checkpoint(name: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_checkpoint", format!("no checkpoint {name:?}"))
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::UnknownRound(_) => (StatusCode::NOT_FOUND, "unknown_round"),
            Error::RoundClosed(_) => (StatusCode::CONFLICT, "round_closed"),
            Error::PositionOutOfRange { .. } => (StatusCode::BAD_REQUEST, "position_out_of_range"),
            Error::Empty(_) | Error::Contract(_) | Error::Config(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            Error::Unsatisfiable { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "unsatisfiable"),
            Error::Format { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "corrupt_transcript"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}
