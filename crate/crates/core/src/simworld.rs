//! Deterministic synthetic multi-camera world.
//!
//! Agents are axis-aligned rectangles moving along piecewise-linear
//! waypoint paths on a 2-D world plane. Each camera images an axis-aligned
//! world rectangle (its field of view) orthographically onto its pixel grid.
//! Fields of view never overlap. Rendering paints a gray background, then
//! agents in declaration order, then occluders, so later layers hide
//! earlier ones. Everything here is a pure function of the scenario.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, PixelRect, Rgb8};
use crate::geometry::{union_area, BBox};

pub const BACKGROUND: Rgb8 = [128, 128, 128];

fn default_fps() -> f64 {
    30.0
}

fn default_resolution() -> (u32, u32) {
    (640, 360)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: String,
    pub color: Rgb8,
    /// Width and height in meters.
    pub size: (f64, f64),
    /// `(t seconds, x meters, y meters)` of the agent's center.
    pub waypoints: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub rect: BBox,
    pub color: Rgb8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub id: String,
    pub fov: BBox,
    #[serde(default = "default_resolution")]
    pub resolution: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub world_size: (f64, f64),
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub duration: f64,
    pub agents: Vec<Agent>,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    pub cameras: Vec<CameraSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub agent_id: String,
    pub bbox: BBox,
    pub visible_fraction: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Scenario::from_json(&text).map_err(|e| match e {
            Error::Scenario(msg) => Error::Scenario(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive".into());
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive".into());
        }
        if self.cameras.is_empty() {
            return bad("scenario declares no cameras".into());
        }
        for (i, a) in self.agents.iter().enumerate() {
            if self.agents[..i].iter().any(|b| b.id == a.id) {
                return bad(format!("duplicate agent id {:?}", a.id));
            }
            if !(a.size.0 > 0.0 && a.size.1 > 0.0) {
                return bad(format!("agent {:?} has non-positive size", a.id));
            }
            if a.waypoints.is_empty() {
                return bad(format!("agent {:?} has no waypoints", a.id));
            }
            if a.waypoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                return bad(format!("agent {:?} waypoint times are not strictly increasing", a.id));
            }
        }
        for (i, c) in self.cameras.iter().enumerate() {
            if self.cameras[..i].iter().any(|d| d.id == c.id) {
                return bad(format!("duplicate camera id {:?}", c.id));
            }
            if !c.fov.is_valid() || c.fov.area() <= 0.0 {
                return bad(format!("camera {:?} has an empty field of view", c.id));
            }
            if c.resolution.0 == 0 || c.resolution.1 == 0 {
                return bad(format!("camera {:?} has zero resolution", c.id));
            }
            for d in &self.cameras[..i] {
                if d.fov.intersection(&c.fov).is_some() {
                    return bad(format!("fields of view of cameras {:?} and {:?} overlap", d.id, c.id));
                }
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u64 {
        (self.fps * self.duration).round() as u64
    }

    pub fn frame_time(&self, frame_index: u64) -> f64 {
        frame_index as f64 / self.fps
    }

    pub fn camera(&self, id: &str) -> Result<&CameraSpec> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::invalid(format!("unknown camera {id:?}")))
    }

    pub fn camera_index(&self, id: &str) -> Option<usize> {
        self.cameras.iter().position(|c| c.id == id)
    }

    pub fn camera_ids(&self) -> Vec<String> {
        self.cameras.iter().map(|c| c.id.clone()).collect()
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    /// Piecewise-linear position of an agent's center; `None` outside its waypoint span.
    pub fn agent_pose(&self, agent: usize, t: f64) -> Option<(f64, f64)> {
        let wps = &self.agents.get(agent)?.waypoints;
        let first = wps.first()?;
        let last = wps.last()?;
        if t < first.0 || t > last.0 {
            return None;
        }
        for w in wps.windows(2) {
            let (a, b) = (w[0], w[1]);
            if t == a.0 {
                return Some((a.1, a.2));
            }
            if t > a.0 && t <= b.0 {
                if t == b.0 {
                    return Some((b.1, b.2));
                }
                let s = (t - a.0) / (b.0 - a.0);
                return Some((a.1 + s * (b.1 - a.1), a.2 + s * (b.2 - a.2)));
            }
        }
        Some((first.1, first.2))
    }

    /// World-space rectangle of an agent at time `t`.
    pub fn agent_rect(&self, agent: usize, t: f64) -> Option<BBox> {
        let (x, y) = self.agent_pose(agent, t)?;
        let (w, h) = self.agents[agent].size;
        Some(BBox::from_center(x, y, w, h))
    }
}

impl CameraSpec {
    /// Orthographic world-to-pixel mapping of a world rectangle.
    pub fn project(&self, r: &BBox) -> BBox {
        let sx = self.resolution.0 as f64 / self.fov.w;
        let sy = self.resolution.1 as f64 / self.fov.h;
        BBox::new((r.x - self.fov.x) * sx, (r.y - self.fov.y) * sy, r.w * sx, r.h * sy)
    }

    pub fn frame_bounds(&self) -> (f64, f64) {
        (self.resolution.0 as f64, self.resolution.1 as f64)
    }
}

/// What covers a pixel, topmost layer first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    Agent(usize),
    Occluder,
}

/// Per-frame projected layers of one camera, in paint order.
struct Projection<'a> {
    camera: &'a CameraSpec,
    layers: Vec<(Layer, BBox, Rgb8)>,
}

impl<'a> Projection<'a> {
    fn new(scenario: &'a Scenario, camera_id: &str, frame_index: u64) -> Result<Self> {
        let camera = scenario.camera(camera_id)?;
        let t = scenario.frame_time(frame_index);
        let mut layers = Vec::new();
        for (i, agent) in scenario.agents.iter().enumerate() {
            if let Some(r) = scenario.agent_rect(i, t) {
                layers.push((Layer::Agent(i), camera.project(&r), agent.color));
            }
        }
        for occ in &scenario.occluders {
            layers.push((Layer::Occluder, camera.project(&occ.rect), occ.color));
        }
        Ok(Projection { camera, layers })
    }
}

pub fn render(scenario: &Scenario, camera_id: &str, frame_index: u64) -> Result<Frame> {
    let proj = Projection::new(scenario, camera_id, frame_index)?;
    let (w, h) = proj.camera.resolution;
    let mut frame = Frame::filled(w, h, BACKGROUND);
    for (_, rect, color) in &proj.layers {
        let px = frame.pixel_rect(rect);
        frame.fill_rect(px, *color);
    }
    Ok(frame)
}

pub fn ground_truth(scenario: &Scenario, camera_id: &str, frame_index: u64) -> Result<Vec<GroundTruthEntry>> {
    let proj = Projection::new(scenario, camera_id, frame_index)?;
    let (fw, fh) = proj.camera.frame_bounds();
    let mut out = Vec::new();
    for (k, (layer, rect, _)) in proj.layers.iter().enumerate() {
        let Layer::Agent(agent) = *layer else { continue };
        let Some(clipped) = rect.clip_to(fw, fh) else { continue };
        let covers: Vec<BBox> = proj.layers[k + 1..]
            .iter()
            .filter_map(|(_, r, _)| r.intersection(&clipped))
            .collect();
        let hidden = union_area(&covers);
        let visible = ((clipped.area() - hidden) / rect.area()).clamp(0.0, 1.0);
        out.push(GroundTruthEntry {
            agent_id: scenario.agents[agent].id.clone(),
            bbox: clipped,
            visible_fraction: visible,
        });
    }
    Ok(out)
}

/// Agent owning the most visible pixels inside `region`, ties to the earlier agent.
pub fn dominant_agent(
    scenario: &Scenario,
    camera_id: &str,
    frame_index: u64,
    region: &BBox,
) -> Result<Option<usize>> {
    let proj = Projection::new(scenario, camera_id, frame_index)?;
    let (w, h) = proj.camera.resolution;
    let crop = PixelRect::covering(region, w, h);
    if crop.is_empty() {
        return Ok(None);
    }
    let cw = (crop.x1 - crop.x0) as usize;
    let mut labels: Vec<Option<Layer>> = vec![None; crop.len()];
    for (layer, rect, _) in &proj.layers {
        let px = PixelRect::covering(rect, w, h);
        let (x0, x1) = (px.x0.max(crop.x0), px.x1.min(crop.x1));
        let (y0, y1) = (px.y0.max(crop.y0), px.y1.min(crop.y1));
        for y in y0..y1.max(y0) {
            for x in x0..x1.max(x0) {
                labels[(y - crop.y0) as usize * cw + (x - crop.x0) as usize] = Some(*layer);
            }
        }
    }
    let mut counts = vec![0usize; scenario.agents.len()];
    for l in labels.into_iter().flatten() {
        if let Layer::Agent(a) = l {
            counts[a] += 1;
        }
    }
    let mut best: Option<usize> = None;
    for (a, &c) in counts.iter().enumerate() {
        if c > 0 && best.is_none_or(|b| c > counts[b]) {
            best = Some(a);
        }
    }
    Ok(best)
}

pub const GT_CSV_HEADER: &str = "frame_index,agent_id,x,y,w,h,visible_fraction";

/// Per-camera ground truth for the whole scenario as CSV text.
pub fn ground_truth_csv(scenario: &Scenario, camera_id: &str) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{GT_CSV_HEADER}").unwrap();
    for f in 0..scenario.frame_count() {
        for e in ground_truth(scenario, camera_id, f)? {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                f, e.agent_id, e.bbox.x, e.bbox.y, e.bbox.w, e.bbox.h, e.visible_fraction
            )
            .unwrap();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRow {
    pub frame_index: u64,
    pub entry: GroundTruthEntry,
}

pub fn parse_ground_truth_csv(text: &str) -> Result<Vec<GroundTruthRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("frame_index") || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = || Error::Parse(format!("ground truth line {}: {line:?}", n + 1));
        if fields.len() != 7 {
            return Err(err());
        }
        let num = |i: usize| fields[i].parse::<f64>().map_err(|_| err());
        rows.push(GroundTruthRow {
            frame_index: fields[0].parse().map_err(|_| err())?,
            entry: GroundTruthEntry {
                agent_id: fields[1].to_string(),
                bbox: BBox::new(num(2)?, num(3)?, num(4)?, num(5)?),
                visible_fraction: num(6)?,
            },
        });
    }
    Ok(rows)
}

/// Single-target ground truth, one `x,y,w,h` line per frame; absent frames are `0,0,0,0`.
pub fn otb_ground_truth(scenario: &Scenario, camera_id: &str, agent_id: &str) -> Result<String> {
    let mut out = String::new();
    for f in 0..scenario.frame_count() {
        let gt = ground_truth(scenario, camera_id, f)?;
        match gt.iter().find(|e| e.agent_id == agent_id && e.visible_fraction > 0.0) {
            Some(e) => writeln!(out, "{},{},{},{}", e.bbox.x, e.bbox.y, e.bbox.w, e.bbox.h),
            None => writeln!(out, "0,0,0,0"),
        }
        .unwrap();
    }
    Ok(out)
}

/// Reads OTB-style ground truth. Fields may be separated by commas, tabs or
/// spaces; zero-area boxes mark frames without the target.
pub fn parse_otb(text: &str) -> Result<Vec<Option<BBox>>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c == '\t' || c == ' ')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse(format!("OTB line {}: {line:?}", n + 1)))?;
        if vals.len() != 4 {
            return Err(Error::Parse(format!("OTB line {} has {} fields", n + 1, vals.len())));
        }
        let b = BBox::new(vals[0], vals[1], vals[2], vals[3]);
        out.push(if b.is_valid() && b.area() > 0.0 { Some(b) } else { None });
    }
    Ok(out)
}

/// Relative path of an exported frame: `<camera>/<frame:06>.ppm`.
pub fn frame_file_name(camera_id: &str, frame_index: u64) -> String {
    format!("{camera_id}/{frame_index:06}.ppm")
}

pub fn ground_truth_file_name(camera_id: &str) -> String {
    format!("{camera_id}/groundtruth.csv")
}

/// Renders every camera for the full duration into `out_dir`.
pub fn export(scenario: &Scenario, out_dir: &Path) -> Result<()> {
    for cam in &scenario.cameras {
        std::fs::create_dir_all(out_dir.join(&cam.id))?;
        for f in 0..scenario.frame_count() {
            let frame = render(scenario, &cam.id, f)?;
            std::fs::write(out_dir.join(frame_file_name(&cam.id, f)), frame.to_ppm())?;
        }
        std::fs::write(out_dir.join(ground_truth_file_name(&cam.id)), ground_truth_csv(scenario, &cam.id)?)?;
    }
    Ok(())
}

/// Map positions of camera FOV centers, scaled so the world spans `map_width`
/// pixels plus a margin. Returns the layout and the map size.
pub fn camera_layout(scenario: &Scenario, map_width: f64) -> (BTreeMap<String, (f64, f64)>, (f64, f64)) {
    const MARGIN: f64 = 40.0;
    let (ww, wh) = scenario.world_size;
    let scale = (map_width - 2.0 * MARGIN).max(1.0) / ww.max(f64::EPSILON);
    let layout = scenario
        .cameras
        .iter()
        .map(|c| {
            let (cx, cy) = c.fov.center();
            let round = |v: f64| (v * 10.0).round() / 10.0;
            (c.id.clone(), (round(MARGIN + cx * scale), round(MARGIN + cy * scale)))
        })
        .collect();
    (layout, (map_width, (2.0 * MARGIN + wh * scale).ceil()))
}
