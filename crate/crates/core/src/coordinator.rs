//! Track lifecycle: target selection, per-tick dispatch between in-camera
//! tracking and cross-camera search, trajectory recording and the
//! trajectory map.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, IndexedFrame};
use crate::geometry::BBox;
use crate::inter::{recommend_cameras, search_step, CameraGraph, SearchOutcome, SearchState, DEFAULT_SEARCH_S_MIN};
use crate::intra::{IntraConfig, IntraState, IntraStatus, IntraStepResult};
use crate::perception::{embed, AppearanceVector, Detector, Embedder, FrameContext};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub intra: IntraConfig,
    /// Similarity gate for cross-camera search.
    pub search_s_min: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { intra: IntraConfig::default(), search_s_min: DEFAULT_SEARCH_S_MIN }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.search_s_min) {
            return Err(Error::invalid("search_s_min must lie in [-1, 1]"));
        }
        self.intra.validate()
    }
}

#[derive(Debug, Clone)]
pub enum TrackPhase {
    Intra { camera: String, state: IntraState },
    Searching(SearchState),
    Done { last_camera: Option<String> },
}

impl TrackPhase {
    pub fn name(&self) -> &'static str {
        match self {
            TrackPhase::Intra { .. } => "intra",
            TrackPhase::Searching(_) => "searching",
            TrackPhase::Done { .. } => "done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub camera: String,
    pub frame: u64,
    pub bbox: BBox,
    pub status: String,
}

/// Consecutive trajectory entries in one camera.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CameraRun {
    pub camera: String,
    pub first_frame: u64,
    pub last_frame: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub entries: Vec<TrajectoryEntry>,
}

impl TrajectoryRecord {
    pub fn push(&mut self, camera: &str, frame: u64, bbox: BBox, status: &str) {
        self.entries.push(TrajectoryEntry { camera: camera.to_string(), frame, bbox, status: status.to_string() });
    }

    pub fn runs(&self) -> Vec<CameraRun> {
        let mut runs: Vec<CameraRun> = Vec::new();
        for e in &self.entries {
            match runs.last_mut() {
                Some(r) if r.camera == e.camera => r.last_frame = e.frame,
                _ => runs.push(CameraRun { camera: e.camera.clone(), first_frame: e.frame, last_frame: e.frame }),
            }
        }
        runs
    }

    pub fn boxes_for(&self, camera: &str) -> BTreeMap<u64, BBox> {
        self.entries.iter().filter(|e| e.camera == camera).map(|e| (e.frame, e.bbox)).collect()
    }
}

/// A phase change, recorded at the frame where it happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub frame: u64,
    pub phase: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: String,
    pub target_crop: Frame,
    pub target_features: AppearanceVector,
    pub phase: TrackPhase,
    pub trajectory: TrajectoryRecord,
    pub phases: Vec<PhaseEvent>,
    pub stalls: u64,
    pub config: TrackerConfig,
}

impl Track {
    /// Camera of the current or, once searching or done, the most recent in-camera phase.
    pub fn camera(&self) -> Option<&str> {
        match &self.phase {
            TrackPhase::Intra { camera, .. } => Some(camera),
            TrackPhase::Searching(s) => Some(&s.origin),
            TrackPhase::Done { last_camera } => last_camera.as_deref(),
        }
    }

    pub fn last_box(&self) -> Option<BBox> {
        self.trajectory.entries.last().map(|e| e.bbox)
    }

    /// Cameras whose frames the next tick needs.
    pub fn required_cameras(&self, graph: &CameraGraph) -> Result<Vec<String>> {
        match &self.phase {
            TrackPhase::Intra { camera, .. } => Ok(vec![camera.clone()]),
            TrackPhase::Searching(s) => recommend_cameras(graph, s),
            TrackPhase::Done { .. } => Ok(Vec::new()),
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, TrackPhase::Done { .. })
    }

    pub fn results(&self) -> ResultsFile {
        ResultsFile {
            track_id: self.id.clone(),
            entries: self
                .trajectory
                .entries
                .iter()
                .map(|e| ResultEntry {
                    camera: e.camera.clone(),
                    frame: e.frame,
                    x: e.bbox.x,
                    y: e.bbox.y,
                    w: e.bbox.w,
                    h: e.bbox.h,
                    status: e.status.clone(),
                })
                .collect(),
            phases: self.phases.clone(),
        }
    }
}

/// Starts a track from a user-drawn box. The box is clipped to the frame and
/// its crop's embedding becomes the permanent target appearance. The track
/// begins acquiring so its first tick relocates the target.
#[allow(clippy::too_many_arguments)]
pub fn select_target(
    id: impl Into<String>,
    camera: &str,
    frame_index: u64,
    frame: &Frame,
    user_box: &BBox,
    embedder: &dyn Embedder,
    config: TrackerConfig,
) -> Result<Track> {
    config.validate()?;
    if !user_box.is_valid() || user_box.area() <= 0.0 {
        return Err(Error::invalid(format!("degenerate selection box {user_box:?}")));
    }
    let clipped = user_box
        .clip_to(frame.width() as f64, frame.height() as f64)
        .filter(|b| !frame.pixel_rect(b).is_empty())
        .ok_or_else(|| Error::invalid(format!("selection box {user_box:?} does not cover any pixel of the frame")))?;
    let target_crop = frame.crop(&clipped)?;
    let target_features = embed(embedder, &FrameContext::new(camera, frame_index, frame), &clipped)?;
    Ok(Track {
        id: id.into(),
        target_crop,
        target_features,
        phase: TrackPhase::Intra { camera: camera.to_string(), state: IntraState::new(config.intra) },
        trajectory: TrajectoryRecord::default(),
        phases: vec![PhaseEvent { frame: frame_index, phase: "intra".into(), camera: Some(camera.to_string()) }],
        stalls: 0,
        config,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TickOutcome {
    Intra { camera: String, frame: u64, result: IntraStepResult },
    Search { frame: u64, outcome: SearchOutcome },
    /// A required frame was missing; nothing changed.
    Stalled { missing: Vec<String> },
    Done,
}

/// Advances a track by one tick using whatever frames are supplied.
pub fn process_tick(
    track: &mut Track,
    frames: &BTreeMap<String, IndexedFrame>,
    graph: &CameraGraph,
    detector: &dyn Detector,
    embedder: &dyn Embedder,
) -> Result<TickOutcome> {
    match &mut track.phase {
        TrackPhase::Done { .. } => Ok(TickOutcome::Done),
        TrackPhase::Intra { camera, state } => {
            let Some(f) = frames.get(camera.as_str()) else {
                track.stalls += 1;
                return Ok(TickOutcome::Stalled { missing: vec![camera.clone()] });
            };
            let camera = camera.clone();
            let ctx = FrameContext::new(&camera, f.index, &f.frame);
            let result = state.step(&ctx, detector, embedder, &track.target_features)?;
            match result.status {
                IntraStatus::Tracking(b) | IntraStatus::Reacquired(b) => {
                    track.trajectory.push(&camera, f.index, b, result.status.tag());
                }
                IntraStatus::Exited => {
                    track.phase = TrackPhase::Searching(SearchState::new(camera.clone()));
                    track.phases.push(PhaseEvent { frame: f.index, phase: "searching".into(), camera: None });
                }
                _ => {}
            }
            Ok(TickOutcome::Intra { camera, frame: f.index, result })
        }
        TrackPhase::Searching(state) => {
            let candidates = recommend_cameras(graph, state)?;
            let available: Vec<u64> = candidates.iter().filter_map(|c| frames.get(c).map(|f| f.index)).collect();
            let Some(&frame) = available.iter().min() else {
                track.stalls += 1;
                return Ok(TickOutcome::Stalled { missing: candidates });
            };
            let outcome = search_step(graph, state, frames, detector, embedder, &track.target_features, track.config.search_s_min)?;
            if let Some(hit) = &outcome.hit {
                track.phase = TrackPhase::Intra { camera: hit.camera.clone(), state: IntraState::new(track.config.intra) };
                track.phases.push(PhaseEvent { frame: hit.frame_index, phase: "intra".into(), camera: Some(hit.camera.clone()) });
            }
            Ok(TickOutcome::Search { frame, outcome })
        }
    }
}

/// Marks the track finished at end of input, keeping the last camera it was
/// tracked or searched from. No phase event is recorded, so the results of a
/// finished offline run match those of a live track fed the same frames.
pub fn finalize(track: &mut Track) {
    if !track.is_done() {
        let last_camera = track.camera().map(str::to_string);
        track.phase = TrackPhase::Done { last_camera };
    }
}

/// Runs a track over frames `start..end`, fetching only the frames each tick
/// needs, then finalizes it.
pub fn run_offline(
    track: &mut Track,
    graph: &CameraGraph,
    detector: &dyn Detector,
    embedder: &dyn Embedder,
    start: u64,
    end: u64,
    mut fetch: impl FnMut(&str, u64) -> Result<Option<Frame>>,
) -> Result<Vec<TickOutcome>> {
    let mut outcomes = Vec::new();
    for index in start..end {
        let mut frames = BTreeMap::new();
        for cam in track.required_cameras(graph)? {
            if let Some(f) = fetch(&cam, index)? {
                frames.insert(cam, IndexedFrame::new(index, f));
            }
        }
        outcomes.push(process_tick(track, &frames, graph, detector, embedder)?);
    }
    finalize(track);
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub camera: String,
    pub frame: u64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub status: String,
}

impl ResultEntry {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.w, self.h)
    }
}

/// Serialized tracking output for one track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub track_id: String,
    pub entries: Vec<ResultEntry>,
    pub phases: Vec<PhaseEvent>,
}

impl ResultsFile {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn boxes_for(&self, camera: &str) -> BTreeMap<u64, BBox> {
        self.entries.iter().filter(|e| e.camera == camera).map(|e| (e.frame, e.bbox())).collect()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG map of the cameras a track visited. Each camera is a labelled node at
/// its layout position; visited nodes are highlighted and carry the frame
/// ranges of every visit; a polyline joins the cameras in visit order.
pub fn render_trajectory_map(
    trajectory: &TrajectoryRecord,
    layout: &BTreeMap<String, (f64, f64)>,
    map_size: (f64, f64),
) -> Result<String> {
    let runs = trajectory.runs();
    let missing: Vec<&str> = runs
        .iter()
        .map(|r| r.camera.as_str())
        .filter(|c| !layout.contains_key(*c))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("cameras missing from layout: {}", missing.join(", "))));
    }
    let (w, h) = map_size;
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::invalid("map size must be positive"));
    }

    let mut ranges: BTreeMap<&str, Vec<(u64, u64)>> = BTreeMap::new();
    for r in &runs {
        ranges.entry(&r.camera).or_default().push((r.first_frame, r.last_frame));
    }

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>"##);
    if runs.len() >= 2 {
        let points: Vec<String> = runs
            .iter()
            .map(|r| {
                let (x, y) = layout[&r.camera];
                format!("{x},{y}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline class="trajectory" points="{}" fill="none" stroke="#d62728" stroke-width="3"/>"##,
            points.join(" ")
        );
    }
    for (cam, &(x, y)) in layout {
        let visits = ranges.get(cam.as_str());
        let (fill, class) = if visits.is_some() { ("#ff7f0e", "camera visited") } else { ("#c7c7c7", "camera") };
        let id = xml_escape(cam);
        let _ = writeln!(svg, r##"<g class="{class}" data-camera="{id}">"##);
        let _ = writeln!(svg, r##"<circle cx="{x}" cy="{y}" r="14" fill="{fill}" stroke="#333333"/>"##);
        let _ = writeln!(svg, r##"<text x="{x}" y="{}" text-anchor="middle" font-size="12">{id}</text>"##, y - 20.0);
        for (i, (a, b)) in visits.into_iter().flatten().enumerate() {
            let _ = writeln!(
                svg,
                r##"<text class="frames" x="{x}" y="{}" text-anchor="middle" font-size="10">frames {a}-{b}</text>"##,
                y + 28.0 + 12.0 * i as f64
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{Detection, HistogramEmbedder};

    fn record(visits: &[(&str, u64)]) -> TrajectoryRecord {
        let mut t = TrajectoryRecord::default();
        for &(c, f) in visits {
            t.push(c, f, BBox::new(1.0, 2.0, 3.0, 4.0), "tracking");
        }
        t
    }

    fn layout(cams: &[&str]) -> BTreeMap<String, (f64, f64)> {
        cams.iter().enumerate().map(|(i, c)| (c.to_string(), (50.0 + 100.0 * i as f64, 60.0))).collect()
    }

    #[test]
    fn empty_map_has_no_polyline() {
        let svg = render_trajectory_map(&record(&[]), &layout(&["cam0", "cam1"]), (400.0, 200.0)).unwrap();
        assert!(!svg.contains("<polyline"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(!svg.contains("camera visited"));
    }

    #[test]
    fn polyline_follows_visit_order() {
        let l = layout(&["cam0", "cam1", "cam2", "cam3", "cam4", "cam5"]);
        let t = record(&[("cam0", 0), ("cam0", 1), ("cam2", 9), ("cam5", 20), ("cam5", 21)]);
        let svg = render_trajectory_map(&t, &l, (700.0, 200.0)).unwrap();
        assert!(svg.contains(r#"points="50,60 250,60 550,60""#));
        assert_eq!(svg.matches("camera visited").count(), 3);
        assert!(svg.contains("frames 0-1"));
        assert!(svg.contains("frames 20-21"));
    }

    #[test]
    fn revisit_reuses_node() {
        let l = layout(&["cam0", "cam1", "cam2"]);
        let t = record(&[("cam0", 0), ("cam0", 3), ("cam2", 10), ("cam0", 30)]);
        let svg = render_trajectory_map(&t, &l, (400.0, 200.0)).unwrap();
        assert!(svg.contains(r#"points="50,60 250,60 50,60""#));
        assert!(svg.contains("frames 0-3"));
        assert!(svg.contains("frames 30-30"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg, render_trajectory_map(&t, &l, (400.0, 200.0)).unwrap());
    }

    #[test]
    fn missing_layout_is_reported() {
        let t = record(&[("cam0", 0), ("camX", 5)]);
        let err = render_trajectory_map(&t, &layout(&["cam0"]), (100.0, 100.0)).unwrap_err();
        assert!(err.to_string().contains("camX"));
    }

    fn frame_with(b: &BBox) -> Frame {
        let mut f = Frame::filled(200, 150, [128, 128, 128]);
        let r = f.pixel_rect(b);
        f.fill_rect(r, [220, 30, 30]);
        f
    }

    #[test]
    fn selection_rules() {
        let b = BBox::new(50.0, 40.0, 20.0, 40.0);
        let f = frame_with(&b);
        let t = select_target("t", "cam0", 0, &f, &b, &HistogramEmbedder, TrackerConfig::default()).unwrap();
        assert!(matches!(t.phase, TrackPhase::Intra { ref camera, .. } if camera == "cam0"));
        assert!(t.trajectory.entries.is_empty());
        assert!((t.target_features.norm() - 1.0).abs() < 1e-9);
        assert_eq!((t.target_crop.width(), t.target_crop.height()), (20, 40));

        let edge = BBox::new(190.0, 140.0, 30.0, 30.0);
        let t = select_target("t", "cam0", 0, &f, &edge, &HistogramEmbedder, TrackerConfig::default()).unwrap();
        assert_eq!((t.target_crop.width(), t.target_crop.height()), (10, 10));

        let zero = BBox::new(10.0, 10.0, 0.0, 5.0);
        assert!(matches!(
            select_target("t", "cam0", 0, &f, &zero, &HistogramEmbedder, TrackerConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
        let outside = BBox::new(500.0, 10.0, 10.0, 5.0);
        assert!(select_target("t", "cam0", 0, &f, &outside, &HistogramEmbedder, TrackerConfig::default()).is_err());
    }

    #[test]
    fn tick_lifecycle() {
        let g = CameraGraph::new(
            vec!["cam0".into(), "cam1".into()],
            [("cam0".to_string(), vec!["cam1".to_string()])].into(),
        )
        .unwrap();
        let b = BBox::new(50.0, 40.0, 20.0, 40.0);
        let seen = frame_with(&b);
        let empty = Frame::filled(200, 150, [128, 128, 128]);
        let mut t = select_target("t", "cam0", 0, &seen, &b, &HistogramEmbedder, TrackerConfig::default()).unwrap();
        // finds a red box wherever there is one
        let det = |ctx: &FrameContext<'_>| -> Result<Vec<Detection>> {
            Ok(if ctx.frame.pixel(60, 60) == [220, 30, 30] { vec![Detection::person(BBox::new(50.0, 40.0, 20.0, 40.0), 0.9)] } else { vec![] })
        };
        let tick = |t: &mut Track, cam: &str, i: u64, f: &Frame| {
            let frames = BTreeMap::from([(cam.to_string(), IndexedFrame::new(i, f.clone()))]);
            process_tick(t, &frames, &g, &det, &HistogramEmbedder).unwrap()
        };

        let out = tick(&mut t, "cam1", 0, &seen);
        assert_eq!(out, TickOutcome::Stalled { missing: vec!["cam0".into()] });
        assert_eq!(t.stalls, 1);

        tick(&mut t, "cam0", 0, &seen);
        tick(&mut t, "cam0", 7, &seen);
        assert_eq!(t.trajectory.entries.len(), 2);
        assert_eq!(t.trajectory.entries[0].status, "reacquired");
        assert_eq!(t.trajectory.entries[1].status, "tracking");
        assert_eq!(t.trajectory.entries[1].frame, 7);

        for i in 8..11 {
            tick(&mut t, "cam0", i, &empty);
        }
        assert!(matches!(&t.phase, TrackPhase::Searching(s) if s.origin == "cam0" && s.iteration == 1));
        assert_eq!(t.required_cameras(&g).unwrap(), vec!["cam1".to_string()]);
        let n = t.trajectory.entries.len();

        let out = tick(&mut t, "cam1", 11, &empty);
        assert!(matches!(out, TickOutcome::Search { frame: 11, ref outcome } if outcome.hit.is_none()));
        assert_eq!(t.trajectory.entries.len(), n);

        let out = tick(&mut t, "cam1", 12, &seen);
        assert!(matches!(out, TickOutcome::Search { ref outcome, .. } if outcome.hit.as_ref().unwrap().camera == "cam1"));
        assert!(matches!(&t.phase, TrackPhase::Intra { camera, .. } if camera == "cam1"));
        assert_eq!(t.trajectory.entries.len(), n);

        let out = tick(&mut t, "cam1", 13, &seen);
        assert!(matches!(out, TickOutcome::Intra { result: IntraStepResult { status: IntraStatus::Reacquired(_), .. }, .. }));
        assert_eq!(t.trajectory.entries.last().unwrap().camera, "cam1");

        finalize(&mut t);
        assert!(matches!(&t.phase, TrackPhase::Done { last_camera: Some(c) } if c == "cam1"));
        assert_eq!(tick(&mut t, "cam1", 14, &seen), TickOutcome::Done);
        let phases: Vec<&str> = t.phases.iter().map(|p| p.phase.as_str()).collect();
        assert_eq!(phases, ["intra", "searching", "intra"]);
        let results = t.results();
        let back = ResultsFile::from_json(&results.to_json_pretty()).unwrap();
        assert_eq!(back, results);
        assert!(!results.to_json_pretty().contains("time"));
    }
}
