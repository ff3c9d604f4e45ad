//! Detection and appearance-embedding interfaces, plus re-identification
//! matching.
//!
//! Detectors and embedders are trait objects so that simulator-backed
//! oracles, replayed files and remote model services are interchangeable.

mod histogram;
mod oracle;
mod remote;
mod replay;

pub use histogram::HistogramEmbedder;
pub use oracle::{OracleDetector, OracleDetectorParams, OracleEmbedder, ORACLE_EMBEDDING_DIM};
pub use remote::{DetectRequest, DetectResponse, EmbedRequest, EmbedResponse, RemoteDetector, RemoteEmbedder, WireDetection};
pub use replay::ReplayDetector;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::BBox;

pub const PERSON_CLASS: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub confidence: f64,
}

impl Detection {
    pub fn person(bbox: BBox, confidence: f64) -> Self {
        Detection { bbox, class_id: PERSON_CLASS, confidence }
    }
}

/// Unit-norm appearance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceVector(Vec<f64>);

impl AppearanceVector {
    /// L2-normalises `values`; fails on empty, non-finite or all-zero input.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding must be a non-empty finite vector"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid("embedding has zero norm"));
        }
        Ok(AppearanceVector(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::ops::Neg for &AppearanceVector {
    type Output = AppearanceVector;

    fn neg(self) -> AppearanceVector {
        AppearanceVector(self.0.iter().map(|v| -v).collect())
    }
}

/// Where a frame came from.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a> {
    pub camera_id: &'a str,
    pub frame_index: u64,
    pub frame: &'a Frame,
}

impl<'a> FrameContext<'a> {
    pub fn new(camera_id: &'a str, frame_index: u64, frame: &'a Frame) -> Self {
        FrameContext { camera_id, frame_index, frame }
    }
}

pub trait Detector: Send + Sync {
    fn detect(&self, ctx: &FrameContext<'_>) -> Result<Vec<Detection>>;
}

pub trait Embedder: Send + Sync {
    /// Embeds the region `bbox` of the frame. Callers go through [`embed`],
    /// which rejects regions that cover no pixel.
    fn embed(&self, ctx: &FrameContext<'_>, bbox: &BBox) -> Result<AppearanceVector>;
}

impl<F> Detector for F
where
    F: Fn(&FrameContext<'_>) -> Result<Vec<Detection>> + Send + Sync,
{
    fn detect(&self, ctx: &FrameContext<'_>) -> Result<Vec<Detection>> {
        self(ctx)
    }
}

pub fn filter_persons(dets: Vec<Detection>) -> Vec<Detection> {
    dets.into_iter().filter(|d| d.class_id == PERSON_CLASS).collect()
}

pub fn detect_persons(detector: &dyn Detector, ctx: &FrameContext<'_>) -> Result<Vec<Detection>> {
    Ok(filter_persons(detector.detect(ctx)?))
}

pub fn embed(embedder: &dyn Embedder, ctx: &FrameContext<'_>, bbox: &BBox) -> Result<AppearanceVector> {
    if !bbox.is_valid() || ctx.frame.pixel_rect(bbox).is_empty() {
        return Err(Error::invalid("embedding region covers no pixel of the frame"));
    }
    embedder.embed(ctx, bbox)
}

/// Cosine similarity of two unit vectors.
pub fn similarity(a: &AppearanceVector, b: &AppearanceVector) -> f64 {
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

/// Index and score of the candidate most similar to `target`, if that score
/// reaches `s_min`. Ties go to the lowest index.
pub fn perform_reid(candidates: &[AppearanceVector], target: &AppearanceVector, s_min: f64) -> Option<(usize, f64)> {
    best_match(candidates.iter().map(|c| similarity(c, target)), s_min)
}

pub(crate) fn best_match(scores: impl Iterator<Item = f64>, s_min: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.filter(|&(_, s)| s >= s_min)
}
