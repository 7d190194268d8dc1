use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ial_core::Error;

use crate::wire::{CellRef, ErrorBody, Versioned};

/// Error response: status plus a versioned `ErrorBody`.
#[derive(Clone, Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, msg: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody { code: code.into(), error: msg.into(), cell: None },
        }
    }

    pub fn conflict(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", msg)
    }

    pub fn not_found(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", msg)
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", msg)
    }

    pub fn invalid_cell(t: usize, d: Option<usize>, msg: impl Into<String>) -> Self {
        let mut e = Self::invalid(msg);
        e.body.cell = Some(CellRef { t, d });
        e
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::MissingInstance(_) => Self::not_found(msg),
            Error::Duplicate { .. } => Self::new(StatusCode::CONFLICT, "duplicate", msg),
            Error::Precondition(_) => Self::conflict(msg),
            Error::MaskValue { t, d, .. } => Self::invalid_cell(t, d, msg),
            Error::Validation(_) | Error::Shape(_) => Self::invalid(msg),
            _ => Self::internal(msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(Versioned::new(self.body))).into_response()
    }
}
