//! Library side of the `handoff` command: run configuration, in-process
//! tracking, evaluation tables and the benchmark.

pub mod bench;
pub mod config;
pub mod evaluate;
pub mod run;

pub use config::{DetectorChoice, EmbedderChoice, RunConfig, Selection};
pub use evaluate::{evaluate, AblationReport, EvalTable, GroundTruth};
pub use run::{run_track, TrackRun};
