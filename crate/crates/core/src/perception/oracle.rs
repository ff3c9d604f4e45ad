//! Simulator-backed perception: perturbed ground-truth detections and
//! identity-basis embeddings.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AppearanceVector, Detection, Detector, Embedder, FrameContext};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::seed;
use crate::simworld::{dominant_agent, ground_truth, Scenario};

pub const ORACLE_EMBEDDING_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleDetectorParams {
    /// Standard deviation of the per-coordinate box noise, in pixels.
    pub jitter_sigma: f64,
    pub dropout_prob: f64,
    /// Expected number of spurious boxes per frame.
    pub false_positive_rate: f64,
    /// Agents less visible than this are not reported.
    pub min_visible_fraction: f64,
    pub seed: u64,
}

impl Default for OracleDetectorParams {
    fn default() -> Self {
        OracleDetectorParams {
            jitter_sigma: 1.0,
            dropout_prob: 0.05,
            false_positive_rate: 0.02,
            min_visible_fraction: 0.3,
            seed: 0,
        }
    }
}

impl OracleDetectorParams {
    pub fn noiseless(seed: u64) -> Self {
        OracleDetectorParams {
            jitter_sigma: 0.0,
            dropout_prob: 0.0,
            false_positive_rate: 0.0,
            min_visible_fraction: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.dropout_prob) || !unit(self.min_visible_fraction) {
            return Err(Error::invalid("oracle probabilities must lie in [0, 1]"));
        }
        if !(self.jitter_sigma >= 0.0) || !(self.false_positive_rate >= 0.0) {
            return Err(Error::invalid("oracle noise parameters must be non-negative"));
        }
        Ok(())
    }
}

const DETECTOR_STREAM: u64 = 0xde7e_c7;
const EMBEDDER_STREAM: u64 = 0xe4b3_dd;

#[derive(Debug, Clone)]
pub struct OracleDetector {
    scenario: Arc<Scenario>,
    params: OracleDetectorParams,
}

impl OracleDetector {
    pub fn new(scenario: Arc<Scenario>, params: OracleDetectorParams) -> Result<Self> {
        params.validate()?;
        Ok(OracleDetector { scenario, params })
    }
}

impl Detector for OracleDetector {
    fn detect(&self, ctx: &FrameContext<'_>) -> Result<Vec<Detection>> {
        let p = &self.params;
        let camera = self.scenario.camera(ctx.camera_id)?;
        let (fw, fh) = camera.frame_bounds();
        let mut rng = seed::stream(&[
            p.seed,
            DETECTOR_STREAM,
            seed::stable_hash(ctx.camera_id.as_bytes()),
            ctx.frame_index,
        ]);
        let mut out = Vec::new();
        for entry in ground_truth(&self.scenario, ctx.camera_id, ctx.frame_index)? {
            // draw every variate so the stream stays aligned across gating outcomes
            let drop = rng.random::<f64>() < p.dropout_prob;
            let noise: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            if entry.visible_fraction < p.min_visible_fraction || drop {
                continue;
            }
            let b = entry.bbox;
            let s = p.jitter_sigma;
            let jittered = BBox::new(b.x + s * noise[0], b.y + s * noise[1], b.w + s * noise[2], b.h + s * noise[3]);
            if jittered.w <= 0.0 || jittered.h <= 0.0 {
                continue;
            }
            if let Some(clipped) = jittered.clip_to(fw, fh) {
                out.push(Detection::person(clipped, 0.5 + 0.5 * entry.visible_fraction));
            }
        }
        if p.false_positive_rate > 0.0 {
            let count = Poisson::new(p.false_positive_rate)
                .map(|d| d.sample(&mut rng) as usize)
                .unwrap_or(0);
            for _ in 0..count {
                let w = rng.random_range(0.05..0.15) * fw;
                let h = rng.random_range(0.10..0.30) * fh;
                let x = rng.random_range(0.0..(fw - w));
                let y = rng.random_range(0.0..(fh - h));
                let conf = rng.random_range(0.3..0.6);
                out.push(Detection::person(BBox::new(x, y, w, h), conf));
            }
        }
        Ok(out)
    }
}

/// Embeds a region as the basis vector of its dominant agent plus Gaussian
/// noise. Regions showing no agent map to a reserved background axis.
#[derive(Debug, Clone)]
pub struct OracleEmbedder {
    scenario: Arc<Scenario>,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
}

impl OracleEmbedder {
    pub fn new(scenario: Arc<Scenario>, noise_sigma: f64, seed: u64) -> Result<Self> {
        Self::with_dim(scenario, ORACLE_EMBEDDING_DIM, noise_sigma, seed)
    }

    pub fn with_dim(scenario: Arc<Scenario>, dim: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        if dim <= scenario.agents.len() {
            return Err(Error::invalid(format!(
                "oracle embedding dimension {dim} cannot hold {} agents plus background",
                scenario.agents.len()
            )));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be non-negative"));
        }
        Ok(OracleEmbedder { scenario, dim, noise_sigma, seed })
    }

    pub fn background_axis(&self) -> usize {
        self.dim - 1
    }
}

impl Embedder for OracleEmbedder {
    fn embed(&self, ctx: &FrameContext<'_>, bbox: &BBox) -> Result<AppearanceVector> {
        let identity = dominant_agent(&self.scenario, ctx.camera_id, ctx.frame_index, bbox)?;
        let axis = identity.unwrap_or(self.background_axis());
        let mut values = vec![0.0; self.dim];
        values[axis] = 1.0;
        if self.noise_sigma > 0.0 {
            let mut rng = seed::stream(&[
                self.seed,
                EMBEDDER_STREAM,
                seed::stable_hash(ctx.camera_id.as_bytes()),
                ctx.frame_index,
                bbox.x.to_bits(),
                bbox.y.to_bits(),
                bbox.w.to_bits(),
                bbox.h.to_bits(),
            ]);
            let normal = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
            values.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        }
        AppearanceVector::normalized(values)
    }
}
