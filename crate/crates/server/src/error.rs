use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use formloop_core::protocol::ErrorBody;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("no wind result for this session")]
    NoWindResult,
    #[error("a wind run is already active")]
    RunActive,
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownSession(_) | ApiError::UnknownBlock(_) | ApiError::NoWindResult => StatusCode::NOT_FOUND,
            ApiError::RunActive => StatusCode::CONFLICT,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::UnknownSession(_) => "unknown_session",
            ApiError::UnknownBlock(_) => "unknown_block",
            ApiError::NoWindResult => "no_wind_result",
            ApiError::RunActive => "run_active",
            ApiError::Invalid(_) => "invalid",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl From<formloop_core::Error> for ApiError {
    fn from(e: formloop_core::Error) -> Self {
        match e {
            formloop_core::Error::Io(_) => ApiError::Internal(e.to_string()),
            _ => ApiError::Invalid(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code().to_string(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
