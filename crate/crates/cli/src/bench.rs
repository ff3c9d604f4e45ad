//! Throughput measurement: per-frame perception plus tracking time, with
//! rendering excluded.

use std::collections::BTreeMap;
use std::time::Instant;

use handoff::coordinator::{finalize, process_tick, select_target};
use handoff::simworld::render;
use handoff::IndexedFrame;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Selection};
use crate::run::{check_selection, TRACK_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub camera: String,
    pub resolution: (u32, u32),
    pub frames: usize,
    pub fps: f64,
    pub mean_latency_ms: f64,
    pub p95_latency_ms: f64,
}

/// Nearest-rank percentile of an ascending slice; 0 for an empty one.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn run_bench(config: &RunConfig, sel: &Selection) -> anyhow::Result<BenchReport> {
    config.validate()?;
    let scenario = &config.scenario;
    check_selection(scenario, sel)?;
    let detector = config.build_detector()?;
    let embedder = config.build_embedder()?;
    let first = render(scenario, &sel.camera, sel.frame)?;
    let mut track = select_target(TRACK_ID, &sel.camera, sel.frame, &first, &sel.bbox, embedder.as_ref(), config.tracker)?;
    let mut latencies = Vec::new();
    for index in sel.frame..scenario.frame_count() {
        let mut frames = BTreeMap::new();
        for cam in track.required_cameras(&config.graph)? {
            frames.insert(cam.clone(), IndexedFrame::new(index, render(scenario, &cam, index)?));
        }
        let start = Instant::now();
        process_tick(&mut track, &frames, &config.graph, detector.as_ref(), embedder.as_ref())?;
        latencies.push(start.elapsed().as_secs_f64() * 1e3);
    }
    finalize(&mut track);
    let total: f64 = latencies.iter().sum();
    let frames = latencies.len();
    let mean = if frames > 0 { total / frames as f64 } else { 0.0 };
    let fps = if total > 0.0 { frames as f64 / (total / 1e3) } else { 0.0 };
    latencies.sort_by(f64::total_cmp);
    Ok(BenchReport {
        camera: sel.camera.clone(),
        resolution: scenario.camera(&sel.camera)?.resolution,
        frames,
        fps,
        mean_latency_ms: mean,
        p95_latency_ms: percentile(&latencies, 95.0),
    })
}
