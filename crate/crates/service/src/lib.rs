//! HTTP tracking service.
//!
//! Clients push frames per camera; the service keeps the latest frame of
//! each camera and advances every track in lockstep. A track ticks once all
//! cameras its current phase needs hold a frame at or beyond the track's
//! clock, so replaying a recording in order gives the same result as an
//! offline run.

mod api;
mod state;

pub use api::{
    router, CameraInfo, CameraList, CreateTrackRequest, CreateTrackResponse, ErrorBody, FrameEnvelope, IngestResponse,
    TrackStatus, API_PREFIX, FRAME_INDEX_HEADER, MAX_BODY_BYTES,
};
pub use state::{ServiceConfig, ServiceState, Stats, TrackSnapshot, TrackUpdate, UpdateState};

use std::net::SocketAddr;
use std::sync::Arc;

/// Serves `state` on an already-bound listener until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Binds `addr`; port 0 picks a free port.
pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}
