//! HTTP service.
//!
//! All engine work runs on the blocking pool. The scene is the only mutable
//! state: readers clone the current `Arc` and work on that snapshot, and a
//! PUT builds the replacement fully before swapping it in.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use redcyan_core::io::{decode_frame, encode_gray_png, encode_png};
use redcyan_core::marker::{marker_image, DictionaryFile};
use redcyan_core::pipeline::{process_frame, PipelineConfig};
use redcyan_core::scene::{SceneBundle, SceneFile};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use tower_http::trace::TraceLayer;

use crate::dto::{self, DetectionDto, PoseDto, TimingsDto};

const MARKER_CELL_PX: usize = 32;
const MARKER_QUIET_CELLS: usize = 2;
const MAX_BODY_BYTES: usize = 32 << 20;

pub struct AppState {
    scene: RwLock<Arc<SceneBundle>>,
    config: PipelineConfig,
}

impl AppState {
    pub fn new(scene: SceneBundle, config: PipelineConfig) -> Self {
        Self {
            scene: RwLock::new(Arc::new(scene)),
            config,
        }
    }

    pub fn scene(&self) -> Arc<SceneBundle> {
        Arc::clone(&self.scene.read().unwrap_or_else(|e| e.into_inner()))
    }

    fn replace_scene(&self, next: SceneBundle) {
        *self.scene.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/process", axum::routing::post(process))
        .route("/v1/scene", get(get_scene).put(put_scene))
        .route("/v1/dictionary", get(get_dictionary))
        .route("/v1/markers/{file}", get(get_marker))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(CorsLayer::permissive())
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

#[derive(Debug)]
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
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.to_owned(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

#[derive(Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub markers: Vec<u32>,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let scene = state.scene();
    Json(Health {
        status: "ok".into(),
        markers: scene.dictionary.patterns().iter().map(|p| p.id).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessResponse {
    pub width: usize,
    pub height: usize,
    /// Augmented frame, PNG, base64.
    pub image_png: String,
    pub detections: Vec<DetectionDto>,
    pub poses: BTreeMap<String, PoseDto>,
    pub timings: TimingsDto,
    pub anaglyph: bool,
}

/// Raw image bytes, or the first file part of a multipart form.
async fn frame_bytes(req: Request) -> Result<Bytes, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        return Bytes::from_request(req, &())
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.to_string()));
    }
    let bad = |e: axum::extract::multipart::MultipartError| {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.body_text())
    };
    let mut form = Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.body_text()))?;
    while let Some(field) = form.next_field().await.map_err(bad)? {
        if field.name() == Some("frame") || field.file_name().is_some() {
            return field.bytes().await.map_err(bad);
        }
    }
    Err(ApiError::new(
        StatusCode::BAD_REQUEST,
        "malformed_request",
        "multipart body has no frame part",
    ))
}

async fn process(State(state): State<Arc<AppState>>, req: Request) -> Result<Json<ProcessResponse>, ApiError> {
    let bytes = frame_bytes(req).await?;
    let scene = state.scene();
    let config = state.config;
    let response = tokio::task::spawn_blocking(move || {
        let frame = decode_frame(&bytes)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_image", e.to_string()))?;
        let cam = &scene.camera;
        if !frame.same_size(cam.width, cam.height) {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "frame_size_mismatch",
                format!(
                    "frame is {}x{}, camera is {}x{}",
                    frame.width(),
                    frame.height(),
                    cam.width,
                    cam.height
                ),
            ));
        }
        let out = process_frame(&frame, &scene.scene, &scene.dictionary, cam, &config).map_err(internal)?;
        let png = encode_png(&out.augmented).map_err(internal)?;
        Ok(ProcessResponse {
            width: frame.width(),
            height: frame.height(),
            image_png: BASE64.encode(png),
            detections: dto::detections(&out.detections),
            poses: dto::poses(&out.poses),
            timings: (&out.timings).into(),
            anaglyph: scene.scene.anaglyph.enabled,
        })
    })
    .await
    .map_err(internal)??;
    Ok(Json(response))
}

async fn get_scene(State(state): State<Arc<AppState>>) -> Json<SceneFile> {
    Json(state.scene().file.clone())
}

/// Relative paths in the new scene resolve against the directory of the
/// scene file the server started with.
async fn put_scene(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<SceneFile>, ApiError> {
    let file: SceneFile = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_scene", e.to_string()))?;
    let base = state.scene().base_dir.clone();
    let bundle = tokio::task::spawn_blocking(move || SceneBundle::from_file(file, base))
        .await
        .map_err(internal)?
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_scene", e.to_string()))?;
    let file = bundle.file.clone();
    state.replace_scene(bundle);
    Ok(Json(file))
}

async fn get_dictionary(State(state): State<Arc<AppState>>) -> Json<DictionaryFile> {
    Json(state.scene().dictionary.to_file_repr())
}

async fn get_marker(State(state): State<Arc<AppState>>, Path(file): Path<String>) -> Result<Response, ApiError> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "unknown_marker", format!("no marker {file:?}"));
    let id: u32 = file
        .strip_suffix(".png")
        .and_then(|s| s.parse().ok())
        .ok_or_else(not_found)?;
    let scene = state.scene();
    let pattern = scene.dictionary.pattern(id).ok_or_else(not_found)?;
    let png = encode_gray_png(&marker_image(pattern, MARKER_CELL_PX, MARKER_QUIET_CELLS)).map_err(internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
