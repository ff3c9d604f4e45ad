//! Per-camera tracking of a single target.
//!
//! The state machine alternates between two phases. While *acquiring*, every
//! person detection is embedded and the one most similar to the target's
//! stored appearance seeds the correlation filter. While *tracking*, the
//! filter predicts the new location, the detection overlapping that
//! prediction best is adopted if the overlap clears the IOU threshold, and
//! the tracker is re-seeded on it. Several other detections overlapping the
//! prediction mean another person is in the way, so the state drops back to
//! acquiring. A run of frames in which nothing overlaps the prediction at
//! all marks the target as having left the camera.

use serde::{Deserialize, Serialize};

use crate::cftracker::{FilterModel, FilterParams};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::perception::{detect_persons, embed, perform_reid, AppearanceVector, Detection, Detector, Embedder, FrameContext};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntraConfig {
    /// Minimum IOU between prediction and detection to adopt the detection.
    pub iou_threshold: f64,
    /// Overlaps above this count towards the occlusion test.
    pub occlusion_min_iou: f64,
    /// Consecutive zero-overlap frames that mean the target left the view.
    pub exit_zero_frames: u32,
    /// Similarity a candidate needs during acquisition; -1 accepts the best one unconditionally.
    pub reid_s_min: f64,
    /// Disabling this turns off the occlusion test (ablation).
    pub occlusion_detection: bool,
    pub filter: FilterParams,
}

impl Default for IntraConfig {
    fn default() -> Self {
        IntraConfig {
            iou_threshold: 0.30,
            occlusion_min_iou: 0.10,
            exit_zero_frames: 3,
            reid_s_min: -1.0,
            occlusion_detection: true,
            filter: FilterParams::default(),
        }
    }
}

impl IntraConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.iou_threshold) || !unit(self.occlusion_min_iou) {
            return Err(Error::invalid("IOU thresholds must lie in [0, 1]"));
        }
        if self.occlusion_min_iou >= self.iou_threshold {
            return Err(Error::invalid("occlusion_min_iou must be below iou_threshold"));
        }
        if self.exit_zero_frames < 1 {
            return Err(Error::invalid("exit_zero_frames must be at least 1"));
        }
        if !(-1.0..=1.0).contains(&self.reid_s_min) {
            return Err(Error::invalid("reid_s_min must lie in [-1, 1]"));
        }
        self.filter.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraPhase {
    Acquiring,
    Tracking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntraStatus {
    Reacquired(BBox),
    Tracking(BBox),
    LowConfidence(BBox),
    OcclusionDetected,
    AcquiringFailed,
    Exited,
}

impl IntraStatus {
    pub fn bbox(&self) -> Option<BBox> {
        match *self {
            IntraStatus::Reacquired(b) | IntraStatus::Tracking(b) | IntraStatus::LowConfidence(b) => Some(b),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            IntraStatus::Reacquired(_) => "reacquired",
            IntraStatus::Tracking(_) => "tracking",
            IntraStatus::LowConfidence(_) => "low_confidence",
            IntraStatus::OcclusionDetected => "occluded",
            IntraStatus::AcquiringFailed => "acquiring_failed",
            IntraStatus::Exited => "exited",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntraStepResult {
    pub status: IntraStatus,
    /// Overlap of each person detection with the prediction; empty while acquiring.
    pub iou_vector: Vec<f64>,
}

/// IOU of each detection against the prediction, and the index of the largest
/// (lowest index on ties).
pub fn apply_iou_constraint(dets: &[Detection], predicted: &BBox) -> (Vec<f64>, Option<usize>) {
    let v: Vec<f64> = dets.iter().map(|d| iou(&d.bbox, predicted)).collect();
    let mut best: Option<usize> = None;
    for (i, x) in v.iter().enumerate() {
        if best.is_none_or(|b| *x > v[b]) {
            best = Some(i);
        }
    }
    (v, best)
}

pub const OCCLUSION_MIN_IOU: f64 = 0.1;

/// Occlusion test on an IOU vector with the default 0.1 overlap floor.
pub fn detect_occlusion(iou_vector: &[f64]) -> bool {
    detect_occlusion_with(iou_vector, OCCLUSION_MIN_IOU)
}

/// True when more than one entry exceeds `min_iou` without equalling the
/// maximum. Every entry equal to the maximum is excluded, duplicates included.
pub fn detect_occlusion_with(iou_vector: &[f64], min_iou: f64) -> bool {
    let max = iou_vector.iter().cloned().fold(0.0, f64::max);
    let count = iou_vector.iter().filter(|&&s| s > min_iou && s != max).count();
    count > 1
}

#[derive(Debug, Clone)]
pub struct IntraState {
    phase: IntraPhase,
    model: Option<FilterModel>,
    last_box: Option<BBox>,
    zero_streak: u32,
    config: IntraConfig,
}

impl IntraState {
    pub fn new(config: IntraConfig) -> Self {
        IntraState { phase: IntraPhase::Acquiring, model: None, last_box: None, zero_streak: 0, config }
    }

    pub fn phase(&self) -> IntraPhase {
        self.phase
    }

    pub fn model(&self) -> Option<&FilterModel> {
        self.model.as_ref()
    }

    pub fn last_box(&self) -> Option<BBox> {
        self.last_box
    }

    pub fn zero_streak(&self) -> u32 {
        self.zero_streak
    }

    pub fn config(&self) -> &IntraConfig {
        &self.config
    }

    fn enter_acquiring(&mut self) {
        self.phase = IntraPhase::Acquiring;
        self.model = None;
        self.zero_streak = 0;
    }

    fn seed_tracker(&mut self, ctx: &FrameContext<'_>, bbox: BBox) -> Result<()> {
        self.model = Some(FilterModel::init(ctx.frame, &bbox, self.config.filter)?);
        self.last_box = Some(bbox);
        self.phase = IntraPhase::Tracking;
        self.zero_streak = 0;
        Ok(())
    }

    /// Person detections clipped to the frame; boxes covering no pixel are dropped.
    fn persons(&self, ctx: &FrameContext<'_>, detector: &dyn Detector) -> Result<Vec<Detection>> {
        let (w, h) = (ctx.frame.width() as f64, ctx.frame.height() as f64);
        Ok(detect_persons(detector, ctx)?
            .into_iter()
            .filter_map(|d| {
                let clipped = d.bbox.clip_to(w, h)?;
                (!ctx.frame.pixel_rect(&clipped).is_empty()).then_some(Detection { bbox: clipped, ..d })
            })
            .collect())
    }

    /// Advances the state machine by one frame.
    pub fn step(
        &mut self,
        ctx: &FrameContext<'_>,
        detector: &dyn Detector,
        embedder: &dyn Embedder,
        target: &AppearanceVector,
    ) -> Result<IntraStepResult> {
        match self.phase {
            IntraPhase::Acquiring => self.acquire(ctx, detector, embedder, target),
            IntraPhase::Tracking => self.track(ctx, detector),
        }
    }

    fn acquire(
        &mut self,
        ctx: &FrameContext<'_>,
        detector: &dyn Detector,
        embedder: &dyn Embedder,
        target: &AppearanceVector,
    ) -> Result<IntraStepResult> {
        let dets = self.persons(ctx, detector)?;
        let features = dets
            .iter()
            .map(|d| embed(embedder, ctx, &d.bbox))
            .collect::<Result<Vec<_>>>()?;
        let status = match perform_reid(&features, target, self.config.reid_s_min) {
            Some((i, _)) => {
                let bbox = dets[i].bbox;
                self.seed_tracker(ctx, bbox)?;
                IntraStatus::Reacquired(bbox)
            }
            None => IntraStatus::AcquiringFailed,
        };
        Ok(IntraStepResult { status, iou_vector: Vec::new() })
    }

    fn track(&mut self, ctx: &FrameContext<'_>, detector: &dyn Detector) -> Result<IntraStepResult> {
        let dets = self.persons(ctx, detector)?;
        let model = self.model.as_mut().expect("tracking phase always holds a model");
        let predicted = model.update(ctx.frame).bbox;
        self.last_box = Some(predicted);
        let (iou_vector, best) = apply_iou_constraint(&dets, &predicted);
        let max = best.map_or(0.0, |i| iou_vector[i]);

        let status = match best {
            Some(i) if max >= self.config.iou_threshold => {
                if self.config.occlusion_detection && detect_occlusion_with(&iou_vector, self.config.occlusion_min_iou) {
                    self.enter_acquiring();
                    IntraStatus::OcclusionDetected
                } else {
                    let bbox = dets[i].bbox;
                    self.seed_tracker(ctx, bbox)?;
                    IntraStatus::Tracking(bbox)
                }
            }
            _ if max == 0.0 => {
                self.zero_streak += 1;
                if self.zero_streak >= self.config.exit_zero_frames {
                    self.enter_acquiring();
                    IntraStatus::Exited
                } else {
                    IntraStatus::LowConfidence(predicted)
                }
            }
            _ => IntraStatus::LowConfidence(predicted),
        };
        Ok(IntraStepResult { status, iou_vector })
    }
}

/// Free-function form of [`IntraState::step`].
pub fn intra_step(
    state: &mut IntraState,
    ctx: &FrameContext<'_>,
    detector: &dyn Detector,
    embedder: &dyn Embedder,
    target: &AppearanceVector,
) -> Result<IntraStepResult> {
    state.step(ctx, detector, embedder, target)
}
