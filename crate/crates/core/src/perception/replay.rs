use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{Detection, Detector, FrameContext};
use crate::error::{Error, Result};
use crate::geometry::BBox;

type Stream = BTreeMap<u64, Vec<Detection>>;

/// Replays detections from text files of `frame_index,class_id,x,y,w,h,confidence`
/// lines, one stream per camera.
#[derive(Debug, Clone, Default)]
pub struct ReplayDetector {
    streams: HashMap<String, Stream>,
}

impl ReplayDetector {
    pub fn parse_stream(text: &str) -> Result<BTreeMap<u64, Vec<Detection>>> {
        let mut stream: Stream = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = || Error::Parse(format!("detection line {}: {line:?}", n + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(err());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| err());
            let det = Detection {
                bbox: BBox::new(num(2)?, num(3)?, num(4)?, num(5)?),
                class_id: f[1].parse().map_err(|_| err())?,
                confidence: num(6)?,
            };
            if !det.bbox.is_valid() || !(0.0..=1.0).contains(&det.confidence) {
                return Err(err());
            }
            stream.entry(f[0].parse().map_err(|_| err())?).or_default().push(det);
        }
        Ok(stream)
    }

    pub fn add_stream(&mut self, camera_id: impl Into<String>, text: &str) -> Result<()> {
        self.streams.insert(camera_id.into(), Self::parse_stream(text)?);
        Ok(())
    }

    /// Loads `<dir>/<camera_id>.txt` for every camera that has one.
    pub fn from_dir(dir: &Path, camera_ids: &[String]) -> Result<Self> {
        let mut det = ReplayDetector::default();
        for cam in camera_ids {
            let path = dir.join(format!("{cam}.txt"));
            if path.exists() {
                det.add_stream(cam.clone(), &std::fs::read_to_string(&path)?)?;
            }
        }
        Ok(det)
    }
}

impl Detector for ReplayDetector {
    fn detect(&self, ctx: &FrameContext<'_>) -> Result<Vec<Detection>> {
        Ok(self
            .streams
            .get(ctx.camera_id)
            .and_then(|s| s.get(&ctx.frame_index))
            .cloned()
            .unwrap_or_default())
    }
}
