//! HTTP inference service: `POST /predict`, `GET /health`, `GET /model-info`.
//!
//! The model is loaded once in the background after the listener binds;
//! until then `/predict` and `/model-info` answer 503 and `/health` reports
//! `starting`. Inference runs on blocking worker threads against one shared
//! immutable model.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, Multipart, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use fluorodx_core::gradcam::overlay;
use fluorodx_core::Label;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::checkpoint::{load_checkpoint, CheckpointMetadata, CheckpointPaths};
use crate::error::{Error, IoContext, Result};
use crate::explain::{explain, DEFAULT_ALPHA};
use crate::io::{decode_image, encode_png};
use crate::zoo::ClassifierModel;

/// Largest accepted image upload.
pub const MAX_IMAGE_BYTES: usize = 20 * 1024 * 1024;
/// Request body cap: the image plus multipart framing.
const MAX_BODY_BYTES: usize = MAX_IMAGE_BYTES + 64 * 1024;

pub const ENV_CHECKPOINT: &str = "FLUORODX_CHECKPOINT";
pub const ENV_BIND: &str = "FLUORODX_BIND";
pub const ENV_EXPLAIN_DEFAULT: &str = "FLUORODX_EXPLAIN_DEFAULT";
pub const ENV_CORS_ORIGIN: &str = "FLUORODX_CORS_ORIGIN";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub checkpoint: PathBuf,
    pub bind: SocketAddr,
    pub explain_default: bool,
    /// `None` allows any origin.
    pub cors_origin: Option<String>,
}

fn parse_bool(name: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" | "" => Ok(false),
        _ => Err(Error::Config(format!("{name} must be a boolean, got `{value}`"))),
    }
}

impl ServiceConfig {
    /// Reads the environment; `default_checkpoint` applies when
    /// `FLUORODX_CHECKPOINT` is unset.
    pub fn from_env(default_checkpoint: Option<PathBuf>) -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok(), default_checkpoint)
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>, default_checkpoint: Option<PathBuf>) -> Result<Self> {
        let checkpoint = get(ENV_CHECKPOINT)
            .map(PathBuf::from)
            .or(default_checkpoint)
            .ok_or_else(|| Error::Config(format!("set {ENV_CHECKPOINT} to the checkpoint path")))?;
        let bind_text = get(ENV_BIND).unwrap_or_else(|| DEFAULT_BIND.into());
        let bind = bind_text
            .parse()
            .map_err(|_| Error::Config(format!("{ENV_BIND} must be host:port, got `{bind_text}`")))?;
        let explain_default = match get(ENV_EXPLAIN_DEFAULT) {
            Some(v) => parse_bool(ENV_EXPLAIN_DEFAULT, &v)?,
            None => false,
        };
        Ok(Self {
            checkpoint,
            bind,
            explain_default,
            cors_origin: get(ENV_CORS_ORIGIN).filter(|o| !o.is_empty() && o != "*"),
        })
    }
}

/// A checkpoint ready to serve.
pub struct LoadedModel {
    pub model: ClassifierModel,
    pub metadata: CheckpointMetadata,
    /// Sidecar bytes as stored, echoed by `/model-info`.
    pub metadata_bytes: Vec<u8>,
}

impl LoadedModel {
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let (model, metadata) = load_checkpoint(path)?;
        let sidecar = CheckpointPaths::new(path).metadata;
        let metadata_bytes = std::fs::read(&sidecar).at(&sidecar)?;
        Ok(Self {
            model,
            metadata,
            metadata_bytes,
        })
    }
}

#[derive(Default)]
pub struct AppState {
    model: OnceLock<Arc<LoadedModel>>,
    load_error: OnceLock<String>,
    explain_default: bool,
}

impl AppState {
    pub fn new(explain_default: bool) -> Arc<Self> {
        Arc::new(Self {
            explain_default,
            ..Self::default()
        })
    }

    /// Installs the model; later calls are ignored.
    pub fn set_model(&self, model: LoadedModel) {
        let _ = self.model.set(Arc::new(model));
    }

    pub fn set_load_error(&self, message: String) {
        let _ = self.load_error.set(message);
    }

    fn model(&self) -> Option<Arc<LoadedModel>> {
        self.model.get().cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probabilities {
    pub negative: f64,
    pub positive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub label: Label,
    pub probabilities: Probabilities,
    pub model_id: String,
    /// Base64 PNG of the Grad-CAM overlay for the predicted class.
    pub heatmap: Option<String>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_loaded: bool,
    pub model_id: Option<String>,
}

/// JSON error body `{"error": {"code", "message"}}`.
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_loaded() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded", "the model is not loaded yet")
    }

    fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": { "code": self.code, "message": self.message } }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct PredictQuery {
    explain: Option<String>,
}

async fn read_image_field(mut multipart: Multipart) -> Result<Vec<u8>, ApiError> {
    let too_large = || ApiError::unprocessable("image_too_large", format!("images are limited to {MAX_IMAGE_BYTES} bytes"));
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => return Err(ApiError::unprocessable("missing_image", "multipart field `image` is required")),
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(too_large()),
            Err(e) => return Err(ApiError::unprocessable("invalid_multipart", e.body_text())),
        };
        if !matches!(field.name(), Some("image" | "file")) {
            continue;
        }
        let bytes = match field.bytes().await {
            Ok(b) => b,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(too_large()),
            Err(e) => return Err(ApiError::unprocessable("invalid_multipart", e.body_text())),
        };
        if bytes.len() > MAX_IMAGE_BYTES {
            return Err(too_large());
        }
        return Ok(bytes.to_vec());
    }
}

fn infer(loaded: &LoadedModel, bytes: &[u8], with_heatmap: bool) -> Result<PredictionResponse, ApiError> {
    let start = Instant::now();
    let image = decode_image(bytes).map_err(|reason| ApiError::unprocessable("undecodable_image", reason))?;
    let internal = |e: Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "inference_failed", e.to_string());
    let (p, heatmap) = if with_heatmap {
        let e = explain(&loaded.model, &image, None).map_err(internal)?;
        let png = encode_png(&overlay(&e.map, &image, DEFAULT_ALPHA)).map_err(internal)?;
        (e.probabilities, Some(base64::engine::general_purpose::STANDARD.encode(png)))
    } else {
        let p = loaded.model.predict_proba(&[&image]).map_err(internal)?[0];
        (p, None)
    };
    Ok(PredictionResponse {
        label: if p[1] > p[0] { Label::Positive } else { Label::Negative },
        probabilities: Probabilities {
            negative: p[0],
            positive: p[1],
        },
        model_id: loaded.metadata.checkpoint_digest.clone(),
        heatmap,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

async fn predict(
    State(state): State<Arc<AppState>>,
    Query(query): Query<PredictQuery>,
    multipart: Multipart,
) -> Result<Json<PredictionResponse>, ApiError> {
    let loaded = state.model().ok_or_else(ApiError::not_loaded)?;
    let with_heatmap = match query.explain.as_deref() {
        Some(v) => parse_bool("explain", v).map_err(|e| ApiError::unprocessable("invalid_query", e.to_string()))?,
        None => state.explain_default,
    };
    let bytes = read_image_field(multipart).await?;
    let response = tokio::task::spawn_blocking(move || infer(&loaded, &bytes, with_heatmap))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "inference_failed", e.to_string()))??;
    Ok(Json(response))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    let model = state.model();
    let status = match (&model, state.load_error.get()) {
        (Some(_), _) => "ok",
        (None, Some(_)) => "failed",
        (None, None) => "starting",
    };
    Json(HealthResponse {
        status: status.into(),
        model_loaded: model.is_some(),
        model_id: model.map(|m| m.metadata.checkpoint_digest.clone()),
    })
}

async fn model_info(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let loaded = state.model().ok_or_else(ApiError::not_loaded)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], loaded.metadata_bytes.clone()).into_response())
}

pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> Router {
    let origin = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/predict", post(predict))
        .route("/health", get(health))
        .route("/model-info", get(model_info))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors)
        .with_state(state)
}

/// Binds, starts loading the checkpoint in the background and serves until
/// interrupted.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let state = AppState::new(config.explain_default);
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let loading = state.clone();
    let checkpoint = config.checkpoint.clone();
    tokio::task::spawn_blocking(move || match LoadedModel::from_checkpoint(&checkpoint) {
        Ok(m) => {
            tracing::info!(model_id = %m.metadata.checkpoint_digest, "model loaded");
            loading.set_model(m);
        }
        Err(e) => {
            tracing::error!("cannot load {}: {e}", checkpoint.display());
            loading.set_load_error(e.to_string());
        }
    });
    axum::serve(listener, router(state, config.cors_origin.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_config() {
        let env = |pairs: &'static [(&'static str, &'static str)]| move |k: &str| pairs.iter().find(|(n, _)| *n == k).map(|(_, v)| v.to_string());
        let c = ServiceConfig::from_lookup(env(&[(ENV_CHECKPOINT, "/m/model")]), None).unwrap();
        assert_eq!(c.bind.to_string(), DEFAULT_BIND);
        assert!(!c.explain_default && c.cors_origin.is_none());
        let c = ServiceConfig::from_lookup(
            env(&[
                (ENV_BIND, "0.0.0.0:9000"),
                (ENV_EXPLAIN_DEFAULT, "true"),
                (ENV_CORS_ORIGIN, "http://localhost:5173"),
            ]),
            Some("/w/final/model".into()),
        )
        .unwrap();
        assert_eq!(
            (c.bind.port(), c.explain_default, c.checkpoint),
            (9000, true, PathBuf::from("/w/final/model"))
        );
        assert!(ServiceConfig::from_lookup(env(&[]), None).is_err());
        assert!(ServiceConfig::from_lookup(env(&[(ENV_CHECKPOINT, "m"), (ENV_EXPLAIN_DEFAULT, "maybe")]), None).is_err());
    }
}
