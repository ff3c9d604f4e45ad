//! HTTP routes under `/api/v1`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderName, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use handoff::{BBox, Frame};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::state::{ServiceError, ServiceState, Stats, TrackUpdate, UpdateState};

pub const API_PREFIX: &str = "/api/v1";

/// Largest accepted request body; a base64 1280x720 PPM is about 3.7 MB.
/// Response header carrying the frame index of a preview image.
pub const FRAME_INDEX_HEADER: &str = "x-frame-index";

pub const MAX_BODY_BYTES: usize = 32 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateTrackRequest {
    pub camera_id: String,
    pub frame_index: u64,
    pub bbox: BBox,
    /// Selection frame; when absent the camera's buffered frame `frame_index` is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_b64: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateTrackResponse {
    pub track_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEnvelope {
    /// Optional in the body; must match the path when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_id: Option<String>,
    pub frame_index: u64,
    pub frame_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub updates: Vec<TrackUpdate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackStatus {
    pub track_id: String,
    pub state: UpdateState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    pub camera_id: String,
    pub frame_index: u64,
    pub phase: String,
    pub trajectory_len: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recommended_cameras: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraInfo {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latest_frame: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraList {
    pub cameras: Vec<CameraInfo>,
}

struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1.to_string(), detail: self.2 })).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::UnknownCamera(c) => ApiError(StatusCode::NOT_FOUND, "unknown_camera", format!("camera {c:?} is not configured")),
            ServiceError::UnknownTrack(t) => ApiError(StatusCode::NOT_FOUND, "unknown_track", format!("no track {t:?}")),
            ServiceError::NoFrame(m) => ApiError(StatusCode::NOT_FOUND, "no_frame", m),
            ServiceError::BadFrame(m) => ApiError(StatusCode::BAD_REQUEST, "bad_frame_encoding", m),
            ServiceError::DegenerateBox(m) => ApiError(StatusCode::UNPROCESSABLE_ENTITY, "degenerate_bbox", m),
            ServiceError::CameraMismatch(m) => ApiError(StatusCode::BAD_REQUEST, "camera_mismatch", m),
            ServiceError::Tracking(e @ (handoff::Error::DetectorUnavailable(_) | handoff::Error::EmbedderUnavailable(_))) => {
                ApiError(StatusCode::SERVICE_UNAVAILABLE, "perception_unavailable", e.to_string())
            }
            ServiceError::Tracking(e) => ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking tracking work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn create_track(
    State(state): State<Arc<ServiceState>>,
    body: Result<Json<CreateTrackRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CreateTrackResponse>)> {
    let Json(req) = body?;
    let track_id = blocking(move || {
        let frame = match &req.frame_b64 {
            Some(b64) => Arc::new(Frame::from_ppm_base64(b64)?),
            None => state.buffered_frame(&req.camera_id, req.frame_index)?,
        };
        state.create_track(&req.camera_id, req.frame_index, req.bbox, &frame)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(CreateTrackResponse { track_id })))
}

async fn ingest_frame(
    State(state): State<Arc<ServiceState>>,
    Path(camera): Path<String>,
    body: Result<Json<FrameEnvelope>, JsonRejection>,
) -> ApiResult<Json<IngestResponse>> {
    let Json(env) = body?;
    if let Some(id) = env.camera_id.as_deref().filter(|id| *id != camera) {
        return Err(ServiceError::CameraMismatch(format!("body names camera {id:?} but the path names {camera:?}")).into());
    }
    let updates = blocking(move || {
        let frame = Frame::from_ppm_base64(&env.frame_b64)?;
        state.ingest(&camera, env.frame_index, frame)
    })
    .await?;
    Ok(Json(IngestResponse { updates }))
}

async fn get_track(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult<Json<TrackStatus>> {
    let snap = state.track_status(&id)?;
    let u = snap.update;
    Ok(Json(TrackStatus {
        track_id: u.track_id,
        state: u.state,
        bbox: u.bbox,
        camera_id: u.camera_id,
        frame_index: u.frame_index,
        phase: snap.phase,
        trajectory_len: snap.trajectory_len,
        recommended_cameras: snap.recommended_cameras,
    }))
}

async fn get_trajectory(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let results = state.trajectory(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], results.to_json_pretty()).into_response())
}

async fn get_map(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let svg = state.map_svg(&id)?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
}

async fn list_cameras(State(state): State<Arc<ServiceState>>) -> Json<CameraList> {
    let cameras = state.cameras().into_iter().map(|(id, latest_frame)| CameraInfo { id, latest_frame }).collect();
    Json(CameraList { cameras })
}

async fn get_preview(State(state): State<Arc<ServiceState>>, Path(camera): Path<String>) -> ApiResult<Response> {
    let latest = state.preview(&camera)?;
    let index = latest.index.to_string();
    let png = blocking(move || Ok(latest.frame.to_png())).await?;
    Ok(([(header::CONTENT_TYPE, "image/png".to_string()), (HeaderName::from_static(FRAME_INDEX_HEADER), index)], png).into_response())
}

async fn get_stats(State(state): State<Arc<ServiceState>>) -> Json<Stats> {
    Json(state.stats())
}

async fn not_found() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "not_found", "no such endpoint".to_string())
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let api = Router::new()
        .route("/tracks", post(create_track))
        .route("/tracks/{id}", get(get_track))
        .route("/tracks/{id}/trajectory", get(get_trajectory))
        .route("/tracks/{id}/map", get(get_map))
        .route("/cameras", get(list_cameras))
        .route("/cameras/{id}/frames", post(ingest_frame))
        .route("/cameras/{id}/preview", get(get_preview))
        .route("/stats", get(get_stats));
    Router::new()
        .nest(API_PREFIX, api)
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(CorsLayer::permissive().expose_headers([HeaderName::from_static(FRAME_INDEX_HEADER)]))
        .with_state(state)
}
