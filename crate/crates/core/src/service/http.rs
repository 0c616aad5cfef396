use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;

use crate::descriptor::{rasterize_pbm, ContourPoint, PointList};
use crate::error::{AfmError, Result};
use crate::retrieval::{PipelineConfig, RankMethod};

use super::config::{parse_rerank, ServiceConfig};
use super::engine::Engine;

/// Shared, read-only request state.
pub struct AppState {
    /// `None` until an index is configured; queries then answer 503.
    pub engine: Option<Arc<Engine>>,
    pub config: ServiceConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    /// `[x, y, phi, w]` in canvas pixels.
    points: Option<Vec<[f64; 4]>>,
    width: Option<u32>,
    height: Option<u32>,
    /// Base64-encoded PBM/PGM.
    pbm: Option<String>,
    k: Option<usize>,
    rank: Option<String>,
    rerank: Option<String>,
    shortlist: Option<usize>,
    nbhd: Option<usize>,
    qe: Option<usize>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<AfmError> for ApiError {
    fn from(e: AfmError) -> Self {
        let status = match &e {
            AfmError::EmptySketch => StatusCode::UNPROCESSABLE_ENTITY,
            AfmError::InvalidParameter(_)
            | AfmError::UnknownMethod(_)
            | AfmError::Parse { .. }
            | AfmError::Format(_)
            | AfmError::QeUnavailable(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn sketch_points(req: &QueryRequest) -> std::result::Result<Vec<ContourPoint>, ApiError> {
    match (&req.points, &req.pbm) {
        (Some(pts), None) => {
            let (Some(width), Some(height)) = (req.width, req.height) else {
                return Err(bad_request("`points` requires `width` and `height`"));
            };
            if pts.iter().flatten().any(|v| !v.is_finite()) {
                return Err(bad_request("non-finite point coordinate"));
            }
            let list = PointList {
                width,
                height,
                points: pts.iter().map(|p| ContourPoint::new(p[0], p[1], p[2], p[3])).collect(),
            };
            Ok(list.normalized()?)
        }
        (None, Some(b64)) => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| bad_request(format!("invalid base64: {e}")))?;
            Ok(rasterize_pbm(&bytes)?)
        }
        _ => Err(bad_request("exactly one of `points` and `pbm` is required")),
    }
}

fn request_pipeline(base: &PipelineConfig, req: &QueryRequest) -> Result<PipelineConfig> {
    let mut cfg = base.clone();
    if let Some(r) = &req.rank {
        cfg.rank = r.parse::<RankMethod>()?;
    }
    if let Some(r) = &req.rerank {
        cfg.rerank = parse_rerank(r)?;
    }
    if let Some(s) = req.shortlist {
        cfg.shortlist = s;
    }
    if let Some(n) = req.nbhd {
        cfg.nbhd = n;
    }
    if let Some(q) = req.qe {
        cfg.qe_top_n = (q > 0).then_some(q);
    }
    cfg.validate()?;
    Ok(cfg)
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> std::result::Result<Response, ApiError> {
    let Some(engine) = state.engine.clone() else {
        return Err(ApiError(StatusCode::SERVICE_UNAVAILABLE, "no index loaded".into()));
    };
    let req: QueryRequest =
        serde_json::from_slice(&body).map_err(|e| bad_request(format!("malformed body: {e}")))?;
    let k = req.k.unwrap_or(state.config.default_k);
    if k == 0 {
        return Err(bad_request("k must be ≥ 1"));
    }
    let cfg = request_pipeline(&engine.pipeline, &req)?;
    let points = sketch_points(&req)?;
    let method = cfg.describe();
    let hits = tokio::task::spawn_blocking(move || engine.query(&points, &cfg, k))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(json!({ "results": hits, "method": method })).into_response())
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match &state.engine {
        Some(e) => Json(json!({ "status": "ok", "indexed": e.index.len() })).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "no index", "indexed": 0 })),
        )
            .into_response(),
    }
}

async fn config(State(state): State<Arc<AppState>>) -> Response {
    Json(&state.config).into_response()
}

const THUMB_TYPES: [(&str, &str); 5] = [
    ("png", "image/png"),
    ("jpg", "image/jpeg"),
    ("jpeg", "image/jpeg"),
    ("pbm", "image/x-portable-bitmap"),
    ("pgm", "image/x-portable-graymap"),
];

async fn thumb(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> std::result::Result<Response, ApiError> {
    let not_found = || ApiError(StatusCode::NOT_FOUND, format!("no thumbnail for `{id}`"));
    let Some(dir) = &state.config.thumbs else {
        return Err(not_found());
    };
    let safe = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if !safe {
        return Err(bad_request("invalid id"));
    }
    for (ext, mime) in THUMB_TYPES {
        let path = Path::new(dir).join(format!("{id}.{ext}"));
        if let Ok(bytes) = tokio::fs::read(&path).await {
            return Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response());
        }
    }
    Err(not_found())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/query", post(query))
        .route("/health", get(health))
        .route("/config", get(config))
        .route("/thumb/{id}", get(thumb))
        .with_state(state)
}

/// Serves on an already bound listener until the task is cancelled.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> Result<()> {
    axum::serve(listener, router(state)).await?;
    Ok(())
}
