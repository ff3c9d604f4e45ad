//! In-process tracking over a scenario.

use anyhow::{bail, Context};
use handoff::coordinator::{render_trajectory_map, run_offline, select_target, ResultsFile, TickOutcome, Track};
use handoff::simworld::{camera_layout, render, Scenario};

use crate::config::{RunConfig, Selection};

pub const MAP_WIDTH: f64 = 800.0;
pub const TRACK_ID: &str = "t-000001";

#[derive(Debug, Clone)]
pub struct TrackRun {
    pub track: Track,
    pub outcomes: Vec<TickOutcome>,
    pub results: ResultsFile,
    pub map_svg: String,
}

impl TrackRun {
    pub fn results_json(&self) -> String {
        self.results.to_json_pretty()
    }
}

pub fn check_selection(scenario: &Scenario, sel: &Selection) -> anyhow::Result<()> {
    scenario.camera(&sel.camera)?;
    if sel.frame >= scenario.frame_count() {
        bail!("selection frame {} is beyond the scenario's {} frames", sel.frame, scenario.frame_count());
    }
    Ok(())
}

/// Selects the target and tracks it from the selection frame to the end of
/// the scenario, rendering only the frames each tick needs.
pub fn run_track(config: &RunConfig, sel: &Selection) -> anyhow::Result<TrackRun> {
    config.validate()?;
    let scenario = &config.scenario;
    check_selection(scenario, sel)?;
    let detector = config.build_detector()?;
    let embedder = config.build_embedder()?;
    let first = render(scenario, &sel.camera, sel.frame)?;
    let mut track = select_target(TRACK_ID, &sel.camera, sel.frame, &first, &sel.bbox, embedder.as_ref(), config.tracker)
        .context("selecting the target")?;
    let outcomes = run_offline(
        &mut track,
        &config.graph,
        detector.as_ref(),
        embedder.as_ref(),
        sel.frame,
        scenario.frame_count(),
        |cam, index| Ok(Some(render(scenario, cam, index)?)),
    )?;
    if let Some(cam) = track.camera() {
        log::info!("track {} finished, last camera {cam}", track.id);
    }
    let (layout, size) = camera_layout(scenario, MAP_WIDTH);
    let map_svg = render_trajectory_map(&track.trajectory, &layout, size)?;
    let results = track.results();
    Ok(TrackRun { track, outcomes, results, map_svg })
}
