//! Adapters for external detector / embedder services speaking JSON over HTTP.
//!
//! `POST {base}/detect` takes `{"frame_b64", "camera_id", "frame_index"}` and
//! answers `{"detections": [{"x","y","w","h","class_id","confidence"}]}`.
//! `POST {base}/embed` takes `{"crop_b64"}` and answers `{"vector": [...]}`.
//! Frames and crops travel as base64-encoded binary PPM.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AppearanceVector, Detection, Detector, Embedder, FrameContext};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub frame_b64: String,
    pub camera_id: String,
    pub frame_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub crop_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
}

impl From<WireDetection> for Detection {
    fn from(w: WireDetection) -> Self {
        Detection { bbox: BBox::new(w.x, w.y, w.w, w.h), class_id: w.class_id, confidence: w.confidence }
    }
}

impl From<&Detection> for WireDetection {
    fn from(d: &Detection) -> Self {
        WireDetection { x: d.bbox.x, y: d.bbox.y, w: d.bbox.w, h: d.bbox.h, class_id: d.class_id, confidence: d.confidence }
    }
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into()
}

fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    url: &str,
    body: &Req,
) -> std::result::Result<Resp, String> {
    let mut resp = agent.post(url).send_json(body).map_err(|e| e.to_string())?;
    resp.body_mut().read_json::<Resp>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone)]
pub struct RemoteDetector {
    url: String,
    agent: ureq::Agent,
}

impl RemoteDetector {
    /// `base_url` is the service root; requests go to `{base_url}/detect`.
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        RemoteDetector { url: format!("{}/detect", base_url.trim_end_matches('/')), agent: agent(timeout) }
    }
}

impl Detector for RemoteDetector {
    fn detect(&self, ctx: &FrameContext<'_>) -> Result<Vec<Detection>> {
        let req = DetectRequest {
            frame_b64: ctx.frame.to_ppm_base64(),
            camera_id: ctx.camera_id.to_string(),
            frame_index: ctx.frame_index,
        };
        let resp: DetectResponse = post(&self.agent, &self.url, &req).map_err(Error::DetectorUnavailable)?;
        let dets: Vec<Detection> = resp.detections.into_iter().map(Detection::from).collect();
        if let Some(bad) = dets.iter().find(|d| !d.bbox.is_valid()) {
            return Err(Error::DetectorUnavailable(format!("service returned an invalid box {:?}", bad.bbox)));
        }
        Ok(dets)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    url: String,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    /// `base_url` is the service root; requests go to `{base_url}/embed`.
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        RemoteEmbedder { url: format!("{}/embed", base_url.trim_end_matches('/')), agent: agent(timeout) }
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, ctx: &FrameContext<'_>, bbox: &BBox) -> Result<AppearanceVector> {
        let crop = ctx.frame.crop(bbox)?;
        let req = EmbedRequest { crop_b64: crop.to_ppm_base64() };
        let resp: EmbedResponse = post(&self.agent, &self.url, &req).map_err(Error::EmbedderUnavailable)?;
        AppearanceVector::normalized(resp.vector).map_err(|e| Error::EmbedderUnavailable(e.to_string()))
    }
}
