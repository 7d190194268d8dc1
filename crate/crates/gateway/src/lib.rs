//! HTTP front end for an interactive attention learning session.
//!
//! `GET /api/round`, `POST /api/round/advance`, `GET /api/round/status`,
//! `GET /api/queue`, `GET /api/instances/{id}`, `POST /api/annotations`,
//! `POST /api/whatif` and `GET /api/metrics`. Responses are JSON objects
//! with a `version` field; see [`wire`] for the schema.

mod error;
mod routes;
mod service;
pub mod session_io;
pub mod wire;

pub use error::ApiError;
pub use routes::router;
pub use service::{Gateway, Persist, Snapshot};
