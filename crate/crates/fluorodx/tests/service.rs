use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::Engine;
use fluorodx::checkpoint::save_checkpoint;
use fluorodx::config::PipelineConfig;
use fluorodx::io::{decode_image, encode_png};
use fluorodx::service::{router, AppState, HealthResponse, LoadedModel, PredictionResponse, MAX_IMAGE_BYTES};
use fluorodx::zoo::{build_model, WeightSource};
use fluorodx_core::augment::Strategy;
use fluorodx_core::{ArchitectureId, Image, Variant};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

const BOUNDARY: &str = "fluorodx-test-boundary";

fn checkpoint(dir: &Path) -> PathBuf {
    let cfg = PipelineConfig::new(dir.into(), dir.into(), dir.into());
    let config = cfg.experiment(ArchitectureId::EfficientNetB0, Strategy::GeometricColor, Variant::Sdp);
    let model = build_model(ArchitectureId::EfficientNetB0, true, &WeightSource::Seeded(5), 9).unwrap();
    let path = dir.join("model.safetensors");
    save_checkpoint(&model, &config, &path).unwrap();
    path
}

fn loaded_app(dir: &Path) -> (Router, LoadedModel) {
    let path = checkpoint(dir);
    let state = AppState::new(false);
    state.set_model(LoadedModel::from_checkpoint(&path).unwrap());
    (router(state, None), LoadedModel::from_checkpoint(&path).unwrap())
}

fn sample_png() -> Vec<u8> {
    let img = Image::from_fn(40, 32, |x, y| {
        [
            0.05,
            if (x as i32 - 20).pow(2) + (y as i32 - 16).pow(2) < 40 {
                0.9
            } else {
                0.1
            },
            0.05,
        ]
    });
    encode_png(&img).unwrap()
}

fn multipart(field: &str, bytes: &[u8]) -> Vec<u8> {
    let mut body = format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{field}\"; filename=\"x.png\"\r\nContent-Type: image/png\r\n\r\n")
        .into_bytes();
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    body
}

fn predict_request(uri: &str, body: Vec<u8>) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn error_code(body: &[u8]) -> String {
    let v: Value = serde_json::from_slice(body).unwrap();
    v["error"]["code"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn unloaded_model_yields_503_and_starting_health() {
    let state = AppState::new(false);
    let app = router(Arc::clone(&state), None);
    let (status, body) = send(&app, predict_request("/predict", multipart("image", &sample_png()))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(error_code(&body), "model_not_loaded");
    let (status, body) = send(&app, Request::get("/model-info").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(error_code(&body), "model_not_loaded");
    let (_, body) = send(&app, Request::get("/health").body(Body::empty()).unwrap()).await;
    let health: HealthResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(health.status, "starting");
    assert!(!health.model_loaded);

    state.set_load_error("checksum mismatch".into());
    let (_, body) = send(&app, Request::get("/health").body(Body::empty()).unwrap()).await;
    let health: HealthResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(health.status, "failed");
}

#[tokio::test]
async fn predict_is_deterministic_and_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let (app, loaded) = loaded_app(dir.path());
    let png = sample_png();
    let mut seen = Vec::new();
    for _ in 0..2 {
        let (status, body) = send(&app, predict_request("/predict", multipart("image", &png))).await;
        assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
        let r: PredictionResponse = serde_json::from_slice(&body).unwrap();
        assert!((r.probabilities.negative + r.probabilities.positive - 1.0).abs() < 1e-6);
        assert_eq!(r.model_id, loaded.metadata.checkpoint_digest);
        assert!(r.heatmap.is_none());
        seen.push(r);
    }
    assert_eq!(seen[0].probabilities, seen[1].probabilities);
    assert_eq!(seen[0].label, seen[1].label);

    let direct = loaded.model.predict_proba(&[&decode_image(&png).unwrap()]).unwrap()[0];
    assert!((direct[1] - seen[0].probabilities.positive).abs() < 1e-12);
}

#[tokio::test]
async fn explain_returns_overlay_png_and_same_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = loaded_app(dir.path());
    let png = sample_png();
    let (_, plain) = send(&app, predict_request("/predict", multipart("file", &png))).await;
    let plain: PredictionResponse = serde_json::from_slice(&plain).unwrap();
    let (status, body) = send(&app, predict_request("/predict?explain=true", multipart("image", &png))).await;
    assert_eq!(status, StatusCode::OK);
    let r: PredictionResponse = serde_json::from_slice(&body).unwrap();
    let overlay = base64::engine::general_purpose::STANDARD.decode(r.heatmap.unwrap()).unwrap();
    let img = decode_image(&overlay).unwrap();
    assert_eq!((img.width(), img.height()), (40, 32));
    assert!((r.probabilities.positive - plain.probabilities.positive).abs() < 1e-6);
}

#[tokio::test]
async fn invalid_requests_yield_422() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = loaded_app(dir.path());
    let cases = [
        (predict_request("/predict", multipart("image", b"not an image")), "undecodable_image"),
        (predict_request("/predict", multipart("caption", b"hello")), "missing_image"),
        (
            predict_request("/predict?explain=maybe", multipart("image", &sample_png())),
            "invalid_query",
        ),
        (
            Request::post("/predict")
                .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
                .body(Body::from("garbage without boundaries"))
                .unwrap(),
            "invalid_multipart",
        ),
    ];
    for (req, code) in cases {
        let (status, body) = send(&app, req).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{code}");
        assert_eq!(error_code(&body), code);
    }
}

#[tokio::test]
async fn oversized_images_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = loaded_app(dir.path());
    let (status, body) = send(&app, predict_request("/predict", multipart("image", &vec![0u8; MAX_IMAGE_BYTES + 1]))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_code(&body), "image_too_large");
}

#[tokio::test]
async fn model_info_echoes_sidecar_and_health_reports_id() {
    let dir = tempfile::tempdir().unwrap();
    let (app, loaded) = loaded_app(dir.path());
    let (status, body) = send(&app, Request::get("/model-info").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, std::fs::read(dir.path().join("model.json")).unwrap());
    let (_, body) = send(&app, Request::get("/health").body(Body::empty()).unwrap()).await;
    let health: HealthResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(health.model_id.as_deref(), Some(loaded.metadata.checkpoint_digest.as_str()));
}

#[tokio::test]
async fn cors_honors_configured_origin() {
    let app = router(AppState::new(false), Some("http://localhost:5173"));
    let req = Request::get("/health")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://localhost:5173");
}
