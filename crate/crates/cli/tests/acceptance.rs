//! Acceptance suite. Each criterion runs in sequence under its own time
//! budget and prints one PASS/FAIL line; the test fails if any line fails.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use handoff::cftracker::{cf_init, cf_update, FilterParams};
use handoff::coordinator::{ResultsFile, TickOutcome};
use handoff::geometry::center_distance;
use handoff::intra::{detect_occlusion, IntraStatus};
use handoff::inter::CameraGraph;
use handoff::metrics::{aggregate, classify_frame, DEFAULT_TAU};
use handoff::simworld::{ground_truth, render, Scenario};
use handoff::{iou, BBox, Frame};
use handoff_cli::bench::run_bench;
use handoff_cli::{evaluate, run_track, GroundTruth, RunConfig, Selection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const SEED: u64 = 7;
const S_MIN: f64 = 0.6;
const TARGET: &str = "target";

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn scenario(name: &str) -> Scenario {
    Scenario::load(repo_path(&format!("scenarios/{name}.json"))).expect("scenario loads")
}

fn config(name: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(scenario(name), SEED)?.with_s_min(S_MIN);
    if name == "handoff" {
        cfg = cfg.with_graph(CameraGraph::load(repo_path("scenarios/handoff_graph.json"))?)?;
    }
    Ok(cfg)
}

/// CLI arguments shared by `track` and `serve` for the reference run.
fn reference_args() -> Vec<String> {
    let path = repo_path("scenarios/occlusion.json");
    ["--scenario", path.to_str().unwrap(), "--seed", &SEED.to_string(), "--s-min", &S_MIN.to_string()]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Target visibility in `camera` per frame.
fn target_visibility(s: &Scenario, camera: &str) -> Result<Vec<(BBox, f64)>> {
    (0..s.frame_count())
        .map(|f| {
            Ok(ground_truth(s, camera, f)?
                .into_iter()
                .find(|e| e.agent_id == TARGET)
                .map_or((BBox::new(0.0, 0.0, 0.0, 0.0), 0.0), |e| (e.bbox, e.visible_fraction)))
        })
        .collect()
}

fn metric_formulas() -> Result<String> {
    let b = BBox::new(10.0, 20.0, 30.0, 60.0);
    let mut matches: Vec<_> = (0..81).map(|_| classify_frame(Some(&b), Some(&b), DEFAULT_TAU)).collect();
    matches.extend((0..19).map(|_| classify_frame(None, Some(&b), DEFAULT_TAU)));
    let r = aggregate(&matches);
    ensure!((r.tp, r.fp, r.fn_) == (81, 0, 19), "counts {:?}", (r.tp, r.fp, r.fn_));
    ensure!((r.precision - 1.0).abs() < 1e-12, "precision {}", r.precision);
    ensure!((r.recall - 0.81).abs() < 1e-12, "recall {}", r.recall);
    ensure!((r.f1 - 0.8950).abs() < 5e-5, "f1 {}", r.f1);
    Ok(format!("precision {:.2} recall {:.2} f1 {:.4}", r.precision, r.recall, r.f1))
}

fn pixel_iou(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> f64 {
    let inside = |r: (i64, i64, i64, i64), x: i64, y: i64| x >= r.0 && x < r.0 + r.2 && y >= r.1 && y < r.1 + r.3;
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..80 {
        for x in 0..80 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn iou_oracle() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut rand_box = || (rng.random_range(0..40), rng.random_range(0..40), rng.random_range(1..40), rng.random_range(1..40));
    let mut worst = 0.0f64;
    let mut overlapping = 0;
    for _ in 0..1000 {
        let (a, b) = (rand_box(), rand_box());
        let to_box = |r: (i64, i64, i64, i64)| BBox::new(r.0 as f64, r.1 as f64, r.2 as f64, r.3 as f64);
        let got = iou(&to_box(a), &to_box(b));
        let want = pixel_iou(a, b);
        overlapping += (want > 0.0) as usize;
        worst = worst.max((got - want).abs());
    }
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    ensure!(overlapping >= 200, "only {overlapping} overlapping pairs exercised");
    Ok(format!("1000 pairs ({overlapping} overlapping), max deviation {worst:.1e}"))
}

/// Occlusion detection exactly as the pseudocode reads: count scores above
/// 0.1 that differ from the maximum; more than one means occlusion.
fn occlusion_pseudocode(iou_vector: &[f64]) -> bool {
    let mut max_iou = 0.0;
    for &s in iou_vector {
        if s > max_iou {
            max_iou = s;
        }
    }
    let mut count = 0;
    for &iou_score in iou_vector {
        if iou_score > 0.1 && iou_score != max_iou {
            count += 1;
        }
    }
    count > 1
}

fn occlusion_exhaustive() -> Result<String> {
    const GRID: [f64; 6] = [0.0, 0.05, 0.1, 0.11, 0.3, 0.7];
    let mut vectors: Vec<Vec<f64>> = vec![Vec::new()];
    let mut frontier: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..4 {
        frontier = frontier
            .iter()
            .flat_map(|v| GRID.iter().map(move |&g| v.iter().copied().chain([g]).collect::<Vec<f64>>()))
            .collect();
        vectors.extend(frontier.iter().cloned());
    }
    ensure!(vectors.len() == 1555, "enumerated {} vectors", vectors.len());
    let mut positives = 0;
    for v in &vectors {
        let want = occlusion_pseudocode(v);
        ensure!(detect_occlusion(v) == want, "mismatch on {v:?}");
        positives += want as usize;
    }
    ensure!(!detect_occlusion(&[0.5, 0.5, 0.2]), "tie case [0.5, 0.5, 0.2] must be false");
    ensure!(detect_occlusion(&[0.8, 0.2, 0.15]) && !detect_occlusion(&[0.8, 0.05]), "worked examples");
    Ok(format!("{} vectors agree ({positives} occluded), tie case false", vectors.len()))
}

fn synthetic_frame(x: i64, y: i64) -> Frame {
    let (w, h) = (640u32, 360u32);
    let mut f = Frame::filled(w, h, [0, 0, 0]);
    for py in 0..h {
        for px in 0..w {
            let g = (70 + px / 10 + py / 8) as u8;
            f.put_pixel(px, py, [g, g, g.saturating_add(10)]);
        }
    }
    for dy in 0..48i64 {
        for dx in 0..24i64 {
            let color = match dy {
                0..=11 => [230, 190, 150],
                12..=29 if (dx / 4) % 2 == 0 => [200, 30, 30],
                12..=29 => [250, 250, 250],
                _ => [30, 40, 120],
            };
            f.put_pixel((x + dx) as u32, (y + dy) as u32, color);
        }
    }
    f
}

fn tracker_constant_velocity() -> Result<String> {
    let (x0, y0) = (120i64, 150i64);
    let start = BBox::new(x0 as f64, y0 as f64, 24.0, 48.0);
    let mut model = cf_init(&synthetic_frame(x0, y0), &start, FilterParams::default())?;
    let mut worst = 0.0f64;
    for k in 1..100i64 {
        let truth = BBox::new((x0 + 2 * k) as f64, y0 as f64, 24.0, 48.0);
        let out = cf_update(&mut model, &synthetic_frame(x0 + 2 * k, y0));
        let err = center_distance(&out.bbox, &truth);
        worst = worst.max(err);
        ensure!(err <= 2.0, "frame {k}: center error {err:.3} px");
    }
    Ok(format!("100 frames at 2 px/frame, worst center error {worst:.3} px"))
}

fn occlusion_recovery() -> Result<String> {
    let cfg = config("occlusion")?.with_occlusion(true);
    let sel = Selection::for_agent(&cfg.scenario, TARGET)?;
    let run = run_track(&cfg, &sel)?;
    let vis = target_visibility(&cfg.scenario, "cam0")?;
    let preds = run.results.boxes_for("cam0");
    let emergences: Vec<u64> =
        (sel.frame + 1..cfg.scenario.frame_count()).filter(|&f| vis[f as usize].1 > 0.0 && vis[f as usize - 1].1 == 0.0).collect();
    ensure!(!emergences.is_empty(), "the target is never fully hidden");
    let mut delays = Vec::new();
    for &f in &emergences {
        let back = (f..cfg.scenario.frame_count())
            .find(|&g| preds.get(&g).is_some_and(|p| iou(p, &vis[g as usize].0) >= DEFAULT_TAU))
            .with_context(|| format!("never reacquired after re-emergence at frame {f}"))?;
        ensure!(back - f <= 5, "re-emergence at frame {f} reacquired only at frame {back}");
        delays.push(back - f);
    }
    let table = evaluate(&run.results, &GroundTruth::from_scenario(&cfg.scenario, TARGET)?, DEFAULT_TAU);
    let mean_iou = table.overall.mean_iou;
    ensure!(mean_iou >= 0.8, "mean IOU {mean_iou:.3}");
    Ok(format!("re-emergences at {emergences:?} reacquired after {delays:?} frames, mean IOU {mean_iou:.3}"))
}

fn ablation_direction() -> Result<String> {
    let cfg = config("occlusion")?;
    let sel = Selection::for_agent(&cfg.scenario, TARGET)?;
    let gt = GroundTruth::from_scenario(&cfg.scenario, TARGET)?;
    let on = evaluate(&run_track(&cfg.clone().with_occlusion(true), &sel)?.results, &gt, DEFAULT_TAU).overall;
    let off = evaluate(&run_track(&cfg.with_occlusion(false), &sel)?.results, &gt, DEFAULT_TAU).overall;
    ensure!(off.ope >= 2.0 * on.ope, "OPE on {:.2} off {:.2}", on.ope, off.ope);
    ensure!(on.f1 - off.f1 >= 0.05, "F1 on {:.3} off {:.3}", on.f1, off.f1);
    Ok(format!("OPE {:.2} vs {:.2}, F1 {:.3} vs {:.3}", on.ope, off.ope, on.f1, off.f1))
}

fn handoff_correctness() -> Result<String> {
    let cfg = config("handoff")?;
    let sel = Selection::for_agent(&cfg.scenario, TARGET)?;
    let run = run_track(&cfg, &sel)?;
    let runs = run.track.trajectory.runs();
    let mut order: Vec<String> = Vec::new();
    for r in &runs {
        if !order.contains(&r.camera) {
            order.push(r.camera.clone());
        }
    }
    ensure!(order == ["cam0", "cam2", "cam5"], "first-visit order {order:?}");
    for cam in ["cam1", "cam3", "cam4"] {
        ensure!(run.results.boxes_for(cam).is_empty(), "acquisitions in off-route camera {cam}");
    }
    let mut delays = Vec::new();
    for r in runs.iter().skip(1) {
        let vis = target_visibility(&cfg.scenario, &r.camera)?;
        let entry = (sel.frame..cfg.scenario.frame_count())
            .find(|&f| vis[f as usize].1 > 0.0)
            .with_context(|| format!("target never enters {}", r.camera))?;
        ensure!(r.first_frame >= entry, "{} acquired at {} before the target entered at {entry}", r.camera, r.first_frame);
        ensure!(r.first_frame - entry <= 60, "{} entered at {entry}, reacquired at {}", r.camera, r.first_frame);
        delays.push(format!("{} +{}", r.camera, r.first_frame - entry));
    }
    Ok(format!("visits {order:?}, reacquired {}", delays.join(", ")))
}

fn zero_iou(v: &[f64]) -> bool {
    v.iter().all(|&s| s == 0.0)
}

fn exit_rule() -> Result<String> {
    let cfg = config("handoff")?;
    let sel = Selection::for_agent(&cfg.scenario, TARGET)?;
    let run = run_track(&cfg, &sel)?;
    let intra: Vec<(&str, u64, &handoff::intra::IntraStepResult)> = run
        .outcomes
        .iter()
        .filter_map(|o| match o {
            TickOutcome::Intra { camera, frame, result } => Some((camera.as_str(), *frame, result)),
            _ => None,
        })
        .collect();
    let exits: Vec<usize> = intra.iter().enumerate().filter(|(_, s)| s.2.status == IntraStatus::Exited).map(|(i, _)| i).collect();
    ensure!(!exits.is_empty(), "no exit observed");
    let mut seen = Vec::new();
    for &i in &exits {
        let (cam, frame, _) = intra[i];
        let in_streak = |k: usize| {
            let (c, _, s) = intra[k];
            c == cam && zero_iou(&s.iou_vector) && matches!(s.status, IntraStatus::LowConfidence(_) | IntraStatus::Exited)
        };
        let streak = (0..=i).rev().take_while(|&k| in_streak(k)).count();
        ensure!(streak == 3, "{cam} exit at frame {frame} ends a zero-IOU streak of {streak} frames");
        ensure!(
            intra[i - 2..i].iter().all(|s| s.2.status != IntraStatus::Exited),
            "{cam} exited before the 3rd zero-IOU frame"
        );
        let vis = target_visibility(&cfg.scenario, cam)?;
        ensure!(vis[frame as usize].1 < 0.3, "exit at frame {frame} while the target is still visible in {cam}");
        seen.push(format!("{cam}@{frame}"));
    }
    Ok(format!("Exited on the 3rd zero-IOU frame at {}", seen.join(", ")))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_handoff"))
}

fn cli_track(out: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let status = bin()
        .arg("track")
        .args(reference_args())
        .args(["--target", TARGET, "--out"])
        .arg(out)
        .stdout(Stdio::null())
        .status()?;
    ensure!(status.success(), "handoff track exited with {status}");
    Ok((std::fs::read(out.join("results.json"))?, std::fs::read(out.join("map.svg"))?))
}

fn determinism() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let a = cli_track(&dir.path().join("a"))?;
    let b = cli_track(&dir.path().join("b"))?;
    ensure!(a.0 == b.0, "results.json differs between runs");
    ensure!(a.1 == b.1, "map.svg differs between runs");
    Ok(format!("results.json {} bytes and map.svg {} bytes identical", a.0.len(), a.1.len()))
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn online_offline() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let (offline, _) = cli_track(dir.path())?;

    let mut server = Server(
        bin().arg("serve").args(reference_args()).args(["--port", "0"]).stdout(Stdio::piped()).spawn()?,
    );
    let mut line = String::new();
    BufReader::new(server.0.stdout.take().context("server stdout")?).read_line(&mut line)?;
    let base = line.trim().strip_prefix("listening on ").with_context(|| format!("unexpected banner {line:?}"))?.to_string();
    let api = format!("{base}/api/v1");
    let agent: ureq::Agent = ureq::Agent::config_builder().proxy(None).build().into();

    let s = scenario("occlusion");
    let sel = Selection::for_agent(&s, TARGET)?;
    let cameras = s.camera_ids();
    let mut track_id = None;
    for f in 0..s.frame_count() {
        for cam in &cameras {
            let frame = render(&s, cam, f)?;
            if f == sel.frame && *cam == sel.camera {
                let body = json!({
                    "camera_id": cam,
                    "frame_index": f,
                    "bbox": sel.bbox,
                    "frame_b64": frame.to_ppm_base64(),
                });
                let mut resp = agent.post(&format!("{api}/tracks")).send_json(&body)?;
                ensure!(resp.status() == 201, "create track returned {}", resp.status());
                let v: serde_json::Value = resp.body_mut().read_json()?;
                track_id = v["track_id"].as_str().map(str::to_string);
            }
            let body = json!({ "camera_id": cam, "frame_index": f, "frame_b64": frame.to_ppm_base64() });
            agent.post(&format!("{api}/cameras/{cam}/frames")).send_json(&body)?;
        }
    }
    let id = track_id.context("track was never created")?;
    let online = agent
        .get(&format!("{api}/tracks/{id}/trajectory"))
        .call()?
        .body_mut()
        .with_config()
        .limit(64 * 1024 * 1024)
        .read_to_vec()?;

    let status = Command::new("kill").args(["-TERM", &server.0.id().to_string()]).status()?;
    ensure!(status.success(), "could not signal the server");
    let exit = server.0.wait()?;
    ensure!(exit.success(), "server exited with {exit} after SIGTERM");

    if online != offline {
        let a = ResultsFile::from_json(std::str::from_utf8(&online)?)?;
        let b = ResultsFile::from_json(std::str::from_utf8(&offline)?)?;
        bail!("trajectories differ: online {} entries, offline {} entries", a.entries.len(), b.entries.len());
    }
    Ok(format!("{} frames replayed over HTTP, trajectory {} bytes identical", s.frame_count(), online.len()))
}

fn throughput() -> Result<String> {
    let cfg = config("occlusion")?;
    let sel = Selection::for_agent(&cfg.scenario, TARGET)?;
    let report = run_bench(&cfg, &sel)?;
    ensure!(report.resolution == (640, 360), "resolution {:?}", report.resolution);
    ensure!(report.fps >= 18.0, "{:.1} FPS", report.fps);
    Ok(format!("{:.0} FPS over {} frames, p95 {:.2} ms", report.fps, report.frames, report.p95_latency_ms))
}

#[test]
fn acceptance() {
    let criteria: [(&str, u64, fn() -> Result<String>); 11] = [
        ("metric formulas", 1, metric_formulas),
        ("iou oracle", 5, iou_oracle),
        ("occlusion detection exhaustive", 1, occlusion_exhaustive),
        ("tracker constant velocity", 10, tracker_constant_velocity),
        ("occlusion recovery", 30, occlusion_recovery),
        ("ablation direction", 60, ablation_direction),
        ("handoff correctness", 60, handoff_correctness),
        ("exit rule", 10, exit_rule),
        ("determinism", 60, determinism),
        ("online offline equivalence", 120, online_offline),
        ("throughput", 60, throughput),
    ];
    let mut failed = Vec::new();
    let _ = writeln!(std::io::stdout().lock());
    for (name, limit, check) in &criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*limit);
        let (verdict, detail) = match (&result, in_time) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; over the {limit} s budget")),
            (Err(e), _) => ("FAIL", format!("{e:#}")),
        };
        let line = format!("{verdict} {name} [{:.2}s / {limit}s] {detail}", elapsed.as_secs_f64());
        let _ = writeln!(std::io::stdout().lock(), "{line}");
        if verdict == "FAIL" {
            failed.push(name.to_string());
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
