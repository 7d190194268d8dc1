use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use crate::error::ApiError;
use crate::service::Gateway;
use crate::wire::{AdvanceRequest, AnnotationSubmit, Versioned, WhatIfRequest};

type Gw = State<Arc<Gateway>>;

fn ok<T: Serialize>(status: StatusCode, body: T) -> Response {
    (status, Json(Versioned::new(body))).into_response()
}

fn reply<T: Serialize>(status: StatusCode, r: Result<T, ApiError>) -> Response {
    match r {
        Ok(body) => ok(status, body),
        Err(e) => e.into_response(),
    }
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    b.map(|Json(v)| v).map_err(|e| {
        let status = match e {
            JsonRejection::JsonSyntaxError(_) | JsonRejection::MissingJsonContentType(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, "bad_request", e.body_text())
    })
}

async fn round(State(gw): Gw) -> Response {
    ok(StatusCode::OK, gw.snapshot().round_view())
}

async fn advance(State(gw): Gw, b: Result<Json<AdvanceRequest>, JsonRejection>) -> Response {
    let r = match body(b) {
        Ok(req) => gw.advance(req).await,
        Err(e) => Err(e),
    };
    reply(StatusCode::ACCEPTED, r)
}

async fn status(State(gw): Gw) -> Response {
    ok(StatusCode::OK, gw.snapshot().job.clone())
}

async fn queue(State(gw): Gw) -> Response {
    reply(StatusCode::OK, gw.snapshot().queue_view())
}

async fn instance(State(gw): Gw, Path(id): Path<String>) -> Response {
    reply(StatusCode::OK, gw.snapshot().instance_view(&id))
}

async fn annotations(State(gw): Gw, b: Result<Json<AnnotationSubmit>, JsonRejection>) -> Response {
    let r = match body(b) {
        Ok(req) => gw.submit(req).await,
        Err(e) => Err(e),
    };
    reply(StatusCode::OK, r)
}

async fn whatif(State(gw): Gw, b: Result<Json<WhatIfRequest>, JsonRejection>) -> Response {
    reply(StatusCode::OK, body(b).and_then(|req| gw.snapshot().whatif(&req)))
}

async fn metrics(State(gw): Gw) -> Response {
    ok(StatusCode::OK, gw.snapshot().metrics_view())
}

pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route("/api/round", get(round))
        .route("/api/round/advance", post(advance))
        .route("/api/round/status", get(status))
        .route("/api/queue", get(queue))
        .route("/api/instances/{id}", get(instance))
        .route("/api/annotations", post(annotations))
        .route("/api/whatif", post(whatif))
        .route("/api/metrics", get(metrics))
        .with_state(gw)
}
