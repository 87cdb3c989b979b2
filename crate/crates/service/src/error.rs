use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{what} {id:?} not found")]
    NotFound { what: &'static str, id: String },

    #[error("{message}")]
    BadRequest { code: &'static str, message: String },

    #[error(transparent)]
    Core(#[from] lensbox_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn not_found(what: &'static str, id: impl Into<String>) -> Self {
        ServiceError::NotFound { what, id: id.into() }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        ServiceError::BadRequest {
            code,
            message: message.into(),
        }
    }
}

/// Wire format of every error response.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

impl ServiceError {
    pub fn status_and_body(&self) -> (StatusCode, ErrorBody) {
        use lensbox_core::Error as E;
        let body = |code, key: Option<&String>| ErrorBody {
            code,
            message: self.to_string(),
            key: key.cloned(),
        };
        match self {
            ServiceError::NotFound { what, .. } => (
                StatusCode::NOT_FOUND,
                body(
                    match *what {
                        "session" => "session_not_found",
                        "image" => "image_not_found",
                        "artifact" => "artifact_not_found",
                        _ => "not_found",
                    },
                    None,
                ),
            ),
            ServiceError::BadRequest { code, .. } => (StatusCode::BAD_REQUEST, body(code, None)),
            ServiceError::Core(e) => match e {
                E::Setting { key, .. } => (StatusCode::BAD_REQUEST, body("invalid_setting", Some(key))),
                E::UnknownVisualizer { .. } => (StatusCode::BAD_REQUEST, body("unknown_visualizer", None)),
                E::Decode(_) => (StatusCode::BAD_REQUEST, body("invalid_image", None)),
                E::Validation(_) | E::Shape { .. } => (StatusCode::BAD_REQUEST, body("invalid_request", None)),
                _ => (StatusCode::INTERNAL_SERVER_ERROR, body("internal", None)),
            },
            ServiceError::Io(_) | ServiceError::Internal(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, body("internal", None))
            }
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, body) = self.status_and_body();
        if status.is_server_error() {
            log::error!("{}", body.message);
        }
        (status, Json(body)).into_response()
    }
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;
