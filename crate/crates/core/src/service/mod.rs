//! Query service: configuration, the engine shared by the CLI and the HTTP
//! server, and the axum router.

mod config;
mod engine;
mod http;

pub use config::{ServiceConfig, BIND_ENV};
pub use engine::{Engine, Hit};
pub use http::{router, serve, AppState};
