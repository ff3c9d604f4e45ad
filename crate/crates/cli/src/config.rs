//! Run configuration: perception backend choices, target selection and the
//! assembled tracker settings.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use handoff::coordinator::TrackerConfig;
use handoff::inter::CameraGraph;
use handoff::perception::{
    Detector, Embedder, HistogramEmbedder, OracleDetector, OracleDetectorParams, OracleEmbedder, RemoteDetector,
    RemoteEmbedder, ReplayDetector,
};
use handoff::simworld::{ground_truth, Scenario};
use handoff::BBox;

const REMOTE_TIMEOUT: Duration = Duration::from_secs(10);
pub const ORACLE_EMBED_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DetectorChoice {
    Oracle,
    /// Directory of `<camera>.txt` detection files.
    File(PathBuf),
    Remote(String),
}

impl FromStr for DetectorChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            _ if s == "oracle" => Ok(DetectorChoice::Oracle),
            Some(("file", dir)) if !dir.is_empty() => Ok(DetectorChoice::File(dir.into())),
            Some(("remote", url)) if !url.is_empty() => Ok(DetectorChoice::Remote(url.to_string())),
            _ => Err(format!("expected oracle, file:<dir> or remote:<url>, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbedderChoice {
    Oracle,
    Histogram,
    Remote(String),
}

impl FromStr for EmbedderChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            _ if s == "oracle" => Ok(EmbedderChoice::Oracle),
            _ if s == "histogram" => Ok(EmbedderChoice::Histogram),
            Some(("remote", url)) if !url.is_empty() => Ok(EmbedderChoice::Remote(url.to_string())),
            _ => Err(format!("expected oracle, histogram or remote:<url>, got {s:?}")),
        }
    }
}

/// Target selection `camera:frame:x,y,w,h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub camera: String,
    pub frame: u64,
    pub bbox: BBox,
}

impl FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let err = || format!("expected camera:frame:x,y,w,h, got {s:?}");
        let mut parts = s.rsplitn(3, ':');
        let (Some(coords), Some(frame), Some(camera)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err());
        };
        let nums: Vec<f64> = coords.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| err())?;
        let [x, y, w, h] = nums[..] else { return Err(err()) };
        Ok(Selection { camera: camera.to_string(), frame: frame.parse().map_err(|_| err())?, bbox: BBox::new(x, y, w, h) })
    }
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.bbox;
        write!(f, "{}:{}:{},{},{},{}", self.camera, self.frame, b.x, b.y, b.w, b.h)
    }
}

impl Selection {
    /// The agent's ground-truth box at the first frame (cameras in declaration
    /// order) where it is fully visible.
    pub fn for_agent(scenario: &Scenario, agent_id: &str) -> anyhow::Result<Selection> {
        if scenario.agent_index(agent_id).is_none() {
            bail!("unknown agent {agent_id:?}");
        }
        for frame in 0..scenario.frame_count() {
            for cam in &scenario.cameras {
                let found = ground_truth(scenario, &cam.id, frame)?
                    .into_iter()
                    .find(|e| e.agent_id == agent_id && e.visible_fraction >= 1.0);
                if let Some(e) = found {
                    return Ok(Selection { camera: cam.id.clone(), frame, bbox: e.bbox });
                }
            }
        }
        bail!("agent {agent_id:?} is never fully visible")
    }
}

/// Everything a tracking run depends on.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Arc<Scenario>,
    pub seed: u64,
    pub detector: DetectorChoice,
    pub embedder: EmbedderChoice,
    pub oracle: OracleDetectorParams,
    pub embed_noise: f64,
    pub tracker: TrackerConfig,
    pub graph: CameraGraph,
}

impl RunConfig {
    /// Defaults: oracle perception, occlusion module on, graph without edges.
    pub fn new(scenario: Scenario, seed: u64) -> anyhow::Result<Self> {
        let graph = CameraGraph::unconnected(scenario.camera_ids())?;
        Ok(RunConfig {
            scenario: Arc::new(scenario),
            seed,
            detector: DetectorChoice::Oracle,
            embedder: EmbedderChoice::Oracle,
            oracle: OracleDetectorParams { seed, ..OracleDetectorParams::default() },
            embed_noise: ORACLE_EMBED_NOISE,
            tracker: TrackerConfig::default(),
            graph,
        })
    }

    pub fn with_occlusion(mut self, on: bool) -> Self {
        self.tracker.intra.occlusion_detection = on;
        self
    }

    /// Sets the acquisition and search similarity gates together.
    pub fn with_s_min(mut self, s_min: f64) -> Self {
        self.tracker.intra.reid_s_min = s_min;
        self.tracker.search_s_min = s_min;
        self
    }

    pub fn with_graph(mut self, graph: CameraGraph) -> anyhow::Result<Self> {
        for c in &self.scenario.cameras {
            if !graph.contains(&c.id) {
                bail!("camera graph does not declare scenario camera {:?}", c.id);
            }
        }
        self.graph = graph;
        Ok(self)
    }

    pub fn build_detector(&self) -> anyhow::Result<Arc<dyn Detector>> {
        Ok(match &self.detector {
            DetectorChoice::Oracle => Arc::new(OracleDetector::new(self.scenario.clone(), OracleDetectorParams { seed: self.seed, ..self.oracle })?),
            DetectorChoice::File(dir) => Arc::new(
                ReplayDetector::from_dir(dir, &self.scenario.camera_ids())
                    .with_context(|| format!("loading detections from {}", dir.display()))?,
            ),
            DetectorChoice::Remote(url) => Arc::new(RemoteDetector::new(url, REMOTE_TIMEOUT)),
        })
    }

    pub fn build_embedder(&self) -> anyhow::Result<Arc<dyn Embedder>> {
        Ok(match &self.embedder {
            EmbedderChoice::Oracle => Arc::new(OracleEmbedder::new(self.scenario.clone(), self.embed_noise, self.seed)?),
            EmbedderChoice::Histogram => Arc::new(HistogramEmbedder),
            EmbedderChoice::Remote(url) => Arc::new(RemoteEmbedder::new(url, REMOTE_TIMEOUT)),
        })
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.tracker.validate()?;
        self.oracle.validate()?;
        Ok(())
    }
}
