//! `handoff` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use handoff::inter::CameraGraph;
use handoff::metrics::DEFAULT_TAU;
use handoff::simworld::{camera_layout, export, Scenario};
use handoff_cli::bench::run_bench;
use handoff_cli::evaluate::{format_ablation, format_table};
use handoff_cli::run::MAP_WIDTH;
use handoff_cli::{evaluate, run_track, AblationReport, DetectorChoice, EmbedderChoice, GroundTruth, RunConfig, Selection};
use handoff::coordinator::ResultsFile;
use handoff_service::{ServiceConfig, ServiceState};

#[derive(Parser)]
#[command(name = "handoff", version, about = "Single-target person tracking across non-overlapping cameras")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render every camera of a scenario to PPM frames plus ground-truth CSVs.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a selected target through a scenario; writes results.json and map.svg.
    Track {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a results file against ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        /// Scenario to compute ground truth from (with --target).
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Directory of <camera>/groundtruth.csv files (with --target), or an OTB text file (with --camera).
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        /// Camera an OTB ground-truth file belongs to.
        #[arg(long)]
        camera: Option<String>,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run with and without the occlusion module and compare.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure tracking throughput (rendering excluded).
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Host the HTTP tracking service.
    Serve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    occlusion: Toggle,
    /// oracle | file:<dir> | remote:<url>
    #[arg(long, default_value = "oracle")]
    detector: DetectorChoice,
    /// oracle | histogram | remote:<url>
    #[arg(long, default_value = "oracle")]
    embedder: EmbedderChoice,
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Similarity gate for both in-camera reacquisition and cross-camera search.
    #[arg(long, allow_negative_numbers = true)]
    s_min: Option<f64>,
    /// Camera adjacency JSON; without it every search covers all cameras.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// camera:frame:x,y,w,h
    #[arg(long)]
    select: Option<Selection>,
    /// Agent to select (its first fully visible box) and to evaluate against.
    #[arg(long)]
    target: Option<String>,
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let scenario = load_scenario(&self.scenario)?;
        let mut cfg = RunConfig::new(scenario, self.seed)?.with_occlusion(matches!(self.occlusion, Toggle::On));
        cfg.detector = self.detector.clone();
        cfg.embedder = self.embedder.clone();
        if let Some(t) = self.iou_threshold {
            cfg.tracker.intra.iou_threshold = t;
        }
        if let Some(s) = self.s_min {
            cfg = cfg.with_s_min(s);
        }
        if let Some(g) = &self.graph {
            let graph = CameraGraph::load(g).with_context(|| format!("loading camera graph {}", g.display()))?;
            cfg = cfg.with_graph(graph)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn selection(&self, scenario: &Scenario) -> anyhow::Result<Selection> {
        match (&self.select, &self.target) {
            (Some(s), _) => {
                handoff_cli::run::check_selection(scenario, s)?;
                Ok(s.clone())
            }
            (None, Some(agent)) => Selection::for_agent(scenario, agent),
            (None, None) => bail!("either --select or --target is required"),
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { scenario, out } => {
            let s = load_scenario(&scenario).invalid()?;
            export(&s, &out).runtime()?;
            println!("wrote {} frames for {} cameras to {}", s.frame_count(), s.cameras.len(), out.display());
        }
        Command::Track { run, out } => {
            let cfg = run.config().invalid()?;
            let sel = run.selection(&cfg.scenario).invalid()?;
            let result = run_track(&cfg, &sel).runtime()?;
            write(&out.join("results.json"), result.results_json()).runtime()?;
            write(&out.join("map.svg"), &result.map_svg).runtime()?;
            println!(
                "track {}: {} trajectory entries, final phase {}; wrote {}",
                result.track.id,
                result.results.entries.len(),
                result.track.phase.name(),
                out.display()
            );
        }
        Command::Eval { results, scenario, gt, target, camera, tau, out } => {
            let text = std::fs::read_to_string(&results).with_context(|| format!("reading {}", results.display())).invalid()?;
            let res = ResultsFile::from_json(&text).invalid()?;
            let truth = match (scenario, gt, target, camera) {
                (Some(s), None, Some(agent), _) => GroundTruth::from_scenario(&load_scenario(&s).invalid()?, &agent),
                (None, Some(dir), Some(agent), _) if dir.is_dir() => GroundTruth::from_csv_dir(&dir, &agent),
                (None, Some(file), _, Some(cam)) => GroundTruth::from_otb(&file, &cam),
                _ => Err(anyhow::anyhow!(
                    "ground truth needs --scenario with --target, --gt <dir> with --target, or --gt <otb file> with --camera"
                )),
            }
            .invalid()?;
            let table = evaluate(&res, &truth, tau);
            print!("{}", format_table(&table));
            if let Some(out) = out {
                write(&out.join("report.json"), json(&table)).runtime()?;
            }
        }
        Command::Ablate { run, tau, out } => {
            let cfg = run.config().invalid()?;
            let sel = run.selection(&cfg.scenario).invalid()?;
            let Some(agent) = run.target.as_deref() else {
                return Err(Failure::Validation(anyhow::anyhow!("ablate needs --target to score against")));
            };
            let truth = GroundTruth::from_scenario(&cfg.scenario, agent).invalid()?;
            let on = run_track(&cfg.clone().with_occlusion(true), &sel).runtime()?;
            let off = run_track(&cfg.clone().with_occlusion(false), &sel).runtime()?;
            let report = AblationReport { on: evaluate(&on.results, &truth, tau), off: evaluate(&off.results, &truth, tau) };
            print!("{}", format_ablation(&report));
            if let Some(out) = out {
                write(&out.join("ablation.json"), json(&report)).runtime()?;
                write(&out.join("on/results.json"), on.results_json()).runtime()?;
                write(&out.join("off/results.json"), off.results_json()).runtime()?;
            }
        }
        Command::Bench { run, out } => {
            let cfg = run.config().invalid()?;
            let sel = run.selection(&cfg.scenario).invalid()?;
            let report = run_bench(&cfg, &sel).runtime()?;
            println!(
                "{} at {}x{}: {} frames, {:.1} FPS, mean {:.2} ms, p95 {:.2} ms",
                report.camera, report.resolution.0, report.resolution.1, report.frames, report.fps, report.mean_latency_ms, report.p95_latency_ms
            );
            if let Some(out) = out {
                write(&out.join("bench.json"), json(&report)).runtime()?;
            }
        }
        Command::Serve { run, port, host } => {
            let cfg = run.config().invalid()?;
            let addr: std::net::SocketAddr = format!("{host}:{port}").parse().context("parsing --host/--port").invalid()?;
            serve(cfg, addr).runtime()?;
        }
    }
    Ok(())
}

fn serve(cfg: RunConfig, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let (map_layout, map_size) = camera_layout(&cfg.scenario, MAP_WIDTH);
    let config = ServiceConfig {
        cameras: cfg.scenario.camera_ids(),
        graph: cfg.graph.clone(),
        tracker: cfg.tracker,
        map_layout,
        map_size,
    };
    let state = Arc::new(ServiceState::new(config, cfg.build_detector()?, cfg.build_embedder()?));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = handoff_service::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        let local = listener.local_addr()?;
        println!("listening on http://{local}");
        use std::io::Write as _;
        std::io::stdout().flush()?;
        handoff_service::serve(listener, state, shutdown_signal()).await?;
        log::info!("service stopped");
        Ok(())
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("installing SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HANDOFF_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
