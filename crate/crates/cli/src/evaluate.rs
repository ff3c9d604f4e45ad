//! Scoring tracking results against ground truth, and the text tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use handoff::coordinator::ResultsFile;
use handoff::metrics::{aggregate, classify_frame, macro_average, EvalReport, FrameMatch};
use handoff::simworld::{ground_truth, ground_truth_file_name, parse_ground_truth_csv, parse_otb, Scenario};
use handoff::BBox;
use serde::{Deserialize, Serialize};

/// Per-camera, per-frame target boxes. Only frames where the target is at
/// least partly visible are present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub cameras: BTreeMap<String, BTreeMap<u64, BBox>>,
}

impl GroundTruth {
    pub fn from_scenario(scenario: &Scenario, agent_id: &str) -> anyhow::Result<Self> {
        if scenario.agent_index(agent_id).is_none() {
            bail!("unknown agent {agent_id:?}");
        }
        let mut cameras = BTreeMap::new();
        for cam in &scenario.cameras {
            let mut boxes = BTreeMap::new();
            for f in 0..scenario.frame_count() {
                if let Some(e) = ground_truth(scenario, &cam.id, f)?.into_iter().find(|e| e.agent_id == agent_id) {
                    if e.visible_fraction > 0.0 {
                        boxes.insert(f, e.bbox);
                    }
                }
            }
            cameras.insert(cam.id.clone(), boxes);
        }
        Ok(GroundTruth { cameras })
    }

    /// Reads `<dir>/<camera>/groundtruth.csv` for every camera subdirectory.
    pub fn from_csv_dir(dir: &Path, agent_id: &str) -> anyhow::Result<Self> {
        let mut cameras = BTreeMap::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let Some(cam) = entry.file_name().to_str().map(str::to_string) else { continue };
            let path = dir.join(ground_truth_file_name(&cam));
            if !path.is_file() {
                continue;
            }
            let rows = parse_ground_truth_csv(&std::fs::read_to_string(&path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            let boxes = rows
                .into_iter()
                .filter(|r| r.entry.agent_id == agent_id && r.entry.visible_fraction > 0.0)
                .map(|r| (r.frame_index, r.entry.bbox))
                .collect();
            cameras.insert(cam, boxes);
        }
        if cameras.is_empty() {
            bail!("no <camera>/groundtruth.csv files under {}", dir.display());
        }
        Ok(GroundTruth { cameras })
    }

    /// Single-camera OTB ground truth, one `x,y,w,h` line per frame from 0.
    pub fn from_otb(path: &Path, camera: &str) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let boxes = parse_otb(&text)?
            .into_iter()
            .enumerate()
            .filter_map(|(i, b)| b.map(|b| (i as u64, b)))
            .collect();
        Ok(GroundTruth { cameras: BTreeMap::from([(camera.to_string(), boxes)]) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRow {
    pub camera: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub tau: f64,
    pub start_frame: u64,
    pub cameras: Vec<CameraRow>,
    /// Unweighted mean of the camera rows.
    pub mean: EvalReport,
    /// All frames of all cameras pooled.
    pub overall: EvalReport,
}

/// Frame-level matching per camera from the track's selection frame onward.
pub fn evaluate(results: &ResultsFile, gt: &GroundTruth, tau: f64) -> EvalTable {
    let start_frame = results.phases.first().map_or(0, |p| p.frame);
    let mut cams: BTreeSet<&str> = gt.cameras.keys().map(String::as_str).collect();
    cams.extend(results.entries.iter().map(|e| e.camera.as_str()));
    let empty = BTreeMap::new();
    let mut rows = Vec::new();
    let mut pooled: Vec<FrameMatch> = Vec::new();
    for cam in cams {
        let preds = results.boxes_for(cam);
        let truth = gt.cameras.get(cam).unwrap_or(&empty);
        let frames: BTreeSet<u64> = preds.keys().chain(truth.keys()).copied().filter(|&f| f >= start_frame).collect();
        let matches: Vec<FrameMatch> = frames.iter().map(|f| classify_frame(preds.get(f), truth.get(f), tau)).collect();
        let report = aggregate(&matches);
        if report.frames_evaluated > 0 {
            rows.push(CameraRow { camera: cam.to_string(), report });
        }
        pooled.extend(matches);
    }
    let mean = macro_average(&rows.iter().map(|r| r.report.clone()).collect::<Vec<_>>());
    EvalTable { tau, start_frame, cameras: rows, mean, overall: aggregate(&pooled) }
}

fn metric_line(out: &mut String, label: &str, r: &EvalReport) {
    let _ = writeln!(
        out,
        "{label:<10} {:>9.2} {:>7.2} {:>6.2} {:>6.2} {:>8.2} {:>6} {:>6} {:>6}",
        r.precision, r.recall, r.f1, r.mean_iou, r.ope, r.tp, r.fp, r.fn_
    );
}

pub fn format_table(t: &EvalTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>9} {:>7} {:>6} {:>6} {:>8} {:>6} {:>6} {:>6}", "Camera", "Precision", "Recall", "F1", "IOU", "OPE", "TP", "FP", "FN");
    for row in &t.cameras {
        metric_line(&mut out, &row.camera, &row.report);
    }
    metric_line(&mut out, "Mean", &t.mean);
    metric_line(&mut out, "Overall", &t.overall);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub on: EvalTable,
    pub off: EvalTable,
}

impl AblationReport {
    pub fn f1_delta(&self) -> f64 {
        self.on.mean.f1 - self.off.mean.f1
    }

    pub fn ope_ratio(&self) -> f64 {
        if self.on.mean.ope > 0.0 {
            self.off.mean.ope / self.on.mean.ope
        } else if self.off.mean.ope > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    }
}

pub fn format_ablation(a: &AblationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} | {:^22} | {:^22}", "", "With occlusion module", "Without occlusion module");
    let _ = writeln!(out, "{:<10} | {:>6} {:>6} {:>8} | {:>6} {:>6} {:>8}", "Camera", "F1", "Recall", "OPE", "F1", "Recall", "OPE");
    let off: BTreeMap<&str, &EvalReport> = a.off.cameras.iter().map(|r| (r.camera.as_str(), &r.report)).collect();
    let on: BTreeMap<&str, &EvalReport> = a.on.cameras.iter().map(|r| (r.camera.as_str(), &r.report)).collect();
    let cams: BTreeSet<&str> = on.keys().chain(off.keys()).copied().collect();
    let blank = EvalReport::default();
    let mut line = |label: &str, l: &EvalReport, r: &EvalReport| {
        let _ = writeln!(out, "{label:<10} | {:>6.2} {:>6.2} {:>8.2} | {:>6.2} {:>6.2} {:>8.2}", l.f1, l.recall, l.ope, r.f1, r.recall, r.ope);
    };
    for cam in cams {
        line(cam, on.get(cam).copied().unwrap_or(&blank), off.get(cam).copied().unwrap_or(&blank));
    }
    line("Mean", &a.on.mean, &a.off.mean);
    let _ = writeln!(out, "F1 delta (on - off): {:+.3}   OPE ratio (off / on): {:.2}", a.f1_delta(), a.ope_ratio());
    out
}
