use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use nsgen_core::data::RangeViolation;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("{0}")]
    OutOfRange(RangeViolation),

    #[error("invalid request: {0}")]
    BadRequest(String),

    #[error("obstacles cannot be rasterized: {0}")]
    Unrasterizable(String),

    #[error("registry: {0}")]
    Registry(String),

    #[error(transparent)]
    Core(#[from] nsgen_core::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownModel(_) => StatusCode::NOT_FOUND,
            ServiceError::OutOfRange(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unrasterizable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Registry(_) | ServiceError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.to_string() });
        if let ServiceError::OutOfRange(v) = &self {
            body["violation"] = json!(v);
        }
        (self.status(), Json(body)).into_response()
    }
}
