//! Frame buffers, tracks and lockstep ticking, independent of HTTP.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use handoff::coordinator::{
    process_tick, render_trajectory_map, select_target, ResultsFile, TickOutcome, Track, TrackPhase, TrackerConfig,
};
use handoff::intra::IntraStatus;
use handoff::inter::CameraGraph;
use handoff::perception::{Detector, Embedder};
use handoff::{BBox, Frame, IndexedFrame};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub cameras: Vec<String>,
    pub graph: CameraGraph,
    pub tracker: TrackerConfig,
    pub map_layout: BTreeMap<String, (f64, f64)>,
    pub map_size: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateState {
    Acquiring,
    Tracking,
    LowConfidence,
    Occluded,
    Searching,
    Exited,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackUpdate {
    pub track_id: String,
    pub state: UpdateState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    pub camera_id: String,
    pub frame_index: u64,
}

/// A track's latest update together with its phase bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSnapshot {
    pub update: TrackUpdate,
    pub phase: String,
    pub trajectory_len: usize,
    /// Cameras the current search step covers; empty outside a search.
    pub recommended_cameras: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub frames_received: u64,
    /// Frames overwritten by a newer one before any track consumed them.
    pub frames_dropped: u64,
    pub ticks: u64,
    pub stalls: u64,
    pub tracks_total: u64,
    pub tracks_active: u64,
}

#[derive(Debug)]
pub enum ServiceError {
    UnknownCamera(String),
    UnknownTrack(String),
    BadFrame(String),
    DegenerateBox(String),
    CameraMismatch(String),
    NoFrame(String),
    Tracking(handoff::Error),
}

impl From<handoff::Error> for ServiceError {
    fn from(e: handoff::Error) -> Self {
        match e {
            handoff::Error::FrameEncoding(m) => ServiceError::BadFrame(m),
            other => ServiceError::Tracking(other),
        }
    }
}

struct Slot {
    frame: IndexedFrame,
    consumed: bool,
}

struct TrackSlot {
    track: Track,
    /// Next frame index the track will process.
    clock: u64,
    last: Option<TrackUpdate>,
}

#[derive(Default)]
struct Inner {
    latest: HashMap<String, Slot>,
    tracks: BTreeMap<String, TrackSlot>,
    next_id: u64,
    stats: Stats,
}

pub struct ServiceState {
    config: ServiceConfig,
    detector: Arc<dyn Detector>,
    embedder: Arc<dyn Embedder>,
    inner: Mutex<Inner>,
}

fn update_for(track: &Track, camera: &str, frame: u64, outcome: &TickOutcome) -> Option<TrackUpdate> {
    let (state, bbox, camera_id) = match outcome {
        TickOutcome::Stalled { .. } | TickOutcome::Done => return None,
        TickOutcome::Intra { result, .. } => match result.status {
            IntraStatus::Reacquired(b) => (UpdateState::Acquiring, Some(b), camera.to_string()),
            IntraStatus::AcquiringFailed => (UpdateState::Acquiring, None, camera.to_string()),
            IntraStatus::Tracking(b) => (UpdateState::Tracking, Some(b), camera.to_string()),
            IntraStatus::LowConfidence(b) => (UpdateState::LowConfidence, Some(b), camera.to_string()),
            IntraStatus::OcclusionDetected => (UpdateState::Occluded, None, camera.to_string()),
            IntraStatus::Exited => (UpdateState::Searching, None, camera.to_string()),
        },
        TickOutcome::Search { outcome, .. } => match &outcome.hit {
            Some(hit) => (UpdateState::Acquiring, None, hit.camera.clone()),
            None => (UpdateState::Searching, None, track.camera().unwrap_or_default().to_string()),
        },
    };
    Some(TrackUpdate { track_id: track.id.clone(), state, bbox, camera_id, frame_index: frame })
}

impl ServiceState {
    pub fn new(config: ServiceConfig, detector: Arc<dyn Detector>, embedder: Arc<dyn Embedder>) -> Self {
        ServiceState { config, detector, embedder, inner: Mutex::new(Inner::default()) }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn check_camera(&self, camera: &str) -> Result<(), ServiceError> {
        if self.config.cameras.iter().any(|c| c == camera) {
            Ok(())
        } else {
            Err(ServiceError::UnknownCamera(camera.to_string()))
        }
    }

    /// Creates a track from a selection. The track's first tick consumes
    /// frame `frame_index`; it runs right away when that frame is already
    /// buffered, otherwise once it is pushed.
    pub fn create_track(&self, camera: &str, frame_index: u64, bbox: BBox, frame: &Frame) -> Result<String, ServiceError> {
        self.check_camera(camera)?;
        if !bbox.is_valid() || bbox.area() <= 0.0 {
            return Err(ServiceError::DegenerateBox(format!("selection box {bbox:?} has no area")));
        }
        let mut guard = self.inner.lock();
        let inner = &mut *guard;
        let id = format!("t-{:06}", inner.next_id + 1);
        let track = select_target(&id, camera, frame_index, frame, &bbox, self.embedder.as_ref(), self.config.tracker)
            .map_err(|e| match e {
                handoff::Error::InvalidArgument(m) => ServiceError::DegenerateBox(m),
                other => other.into(),
            })?;
        inner.next_id += 1;
        inner.stats.tracks_total += 1;
        let mut slot = TrackSlot { track, clock: frame_index, last: None };
        let cams = slot.track.required_cameras(&self.config.graph).map_err(ServiceError::Tracking)?;
        self.try_tick(&mut slot, &cams, &mut inner.latest, &mut inner.stats)?;
        inner.tracks.insert(id.clone(), slot);
        Ok(id)
    }

    /// Ticks `slot` if every camera in `cams` holds a frame at or beyond its clock.
    fn try_tick(
        &self,
        slot: &mut TrackSlot,
        cams: &[String],
        latest: &mut HashMap<String, Slot>,
        stats: &mut Stats,
    ) -> Result<Option<TrackUpdate>, ServiceError> {
        let ready: Option<Vec<&Slot>> = cams.iter().map(|c| latest.get(c).filter(|s| s.frame.index >= slot.clock)).collect();
        let Some(ready) = ready else { return Ok(None) };
        let Some(tick_index) = ready.iter().map(|s| s.frame.index).min() else { return Ok(None) };
        let frames: BTreeMap<String, IndexedFrame> = cams.iter().cloned().zip(ready.iter().map(|s| s.frame.clone())).collect();
        let current = slot.track.camera().unwrap_or_default().to_string();
        let outcome = process_tick(&mut slot.track, &frames, &self.config.graph, self.detector.as_ref(), self.embedder.as_ref())
            .map_err(ServiceError::Tracking)?;
        stats.ticks += 1;
        if let TickOutcome::Stalled { .. } = outcome {
            stats.stalls += 1;
            return Ok(None);
        }
        for c in cams {
            if let Some(s) = latest.get_mut(c) {
                s.consumed = true;
            }
        }
        slot.clock = tick_index + 1;
        let update = update_for(&slot.track, &current, tick_index, &outcome);
        if let Some(u) = &update {
            slot.last = Some(u.clone());
        }
        Ok(update)
    }

    /// Buffers a frame and ticks every track that was waiting on it.
    pub fn ingest(&self, camera: &str, frame_index: u64, frame: Frame) -> Result<Vec<TrackUpdate>, ServiceError> {
        self.check_camera(camera)?;
        let mut guard = self.inner.lock();
        let inner = &mut *guard;
        inner.stats.frames_received += 1;

        let mut required: HashMap<String, Vec<String>> = HashMap::new();
        for (id, slot) in &inner.tracks {
            if !slot.track.is_done() {
                required.insert(id.clone(), slot.track.required_cameras(&self.config.graph).map_err(ServiceError::Tracking)?);
            }
        }
        let needed = required.values().any(|cams| cams.iter().any(|c| c == camera));
        let fresh = Slot { frame: IndexedFrame::new(frame_index, frame), consumed: false };
        if let Some(old) = inner.latest.insert(camera.to_string(), fresh) {
            if !old.consumed && needed {
                inner.stats.frames_dropped += 1;
            }
        }

        let mut updates = Vec::new();
        for (id, slot) in inner.tracks.iter_mut() {
            let Some(cams) = required.get(id) else { continue };
            if !cams.iter().any(|c| c == camera) {
                continue;
            }
            if let Some(u) = self.try_tick(slot, cams, &mut inner.latest, &mut inner.stats)? {
                updates.push(u);
            }
        }
        Ok(updates)
    }

    pub fn track_status(&self, id: &str) -> Result<TrackSnapshot, ServiceError> {
        let inner = self.inner.lock();
        let slot = inner.tracks.get(id).ok_or_else(|| ServiceError::UnknownTrack(id.to_string()))?;
        let t = &slot.track;
        let last = slot.last.clone().unwrap_or_else(|| TrackUpdate {
            track_id: t.id.clone(),
            state: UpdateState::Acquiring,
            bbox: None,
            camera_id: t.camera().unwrap_or_default().to_string(),
            frame_index: slot.clock,
        });
        let last = match &t.phase {
            TrackPhase::Done { .. } => TrackUpdate { state: UpdateState::Done, bbox: None, ..last },
            _ => last,
        };
        let recommended_cameras = match &t.phase {
            TrackPhase::Searching(_) => t.required_cameras(&self.config.graph).map_err(ServiceError::Tracking)?,
            _ => Vec::new(),
        };
        Ok(TrackSnapshot {
            update: last,
            phase: t.phase.name().to_string(),
            trajectory_len: t.trajectory.entries.len(),
            recommended_cameras,
        })
    }

    pub fn trajectory(&self, id: &str) -> Result<ResultsFile, ServiceError> {
        let inner = self.inner.lock();
        let slot = inner.tracks.get(id).ok_or_else(|| ServiceError::UnknownTrack(id.to_string()))?;
        Ok(slot.track.results())
    }

    pub fn map_svg(&self, id: &str) -> Result<String, ServiceError> {
        let inner = self.inner.lock();
        let slot = inner.tracks.get(id).ok_or_else(|| ServiceError::UnknownTrack(id.to_string()))?;
        render_trajectory_map(&slot.track.trajectory, &self.config.map_layout, self.config.map_size)
            .map_err(ServiceError::Tracking)
    }

    pub fn cameras(&self) -> Vec<(String, Option<u64>)> {
        let inner = self.inner.lock();
        self.config.cameras.iter().map(|c| (c.clone(), inner.latest.get(c).map(|s| s.frame.index))).collect()
    }

    /// Latest buffered frame of `camera`.
    pub fn preview(&self, camera: &str) -> Result<IndexedFrame, ServiceError> {
        self.check_camera(camera)?;
        let inner = self.inner.lock();
        inner.latest.get(camera).map(|s| s.frame.clone()).ok_or_else(|| ServiceError::NoFrame(format!("no frame received yet for camera {camera:?}")))
    }

    /// The buffered frame of `camera` if it is frame `index`.
    pub fn buffered_frame(&self, camera: &str, index: u64) -> Result<Arc<Frame>, ServiceError> {
        let latest = self.preview(camera)?;
        if latest.index != index {
            return Err(ServiceError::NoFrame(format!(
                "{camera} frame {index} is not buffered (latest is {})",
                latest.index
            )));
        }
        Ok(latest.frame)
    }

    pub fn stats(&self) -> Stats {
        let inner = self.inner.lock();
        Stats { tracks_active: inner.tracks.values().filter(|s| !s.track.is_done()).count() as u64, ..inner.stats.clone() }
    }
}
