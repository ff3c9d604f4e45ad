//! Single-target person tracking across a network of non-overlapping
//! cameras.
//!
//! Within a camera a kernelized correlation filter follows the target and
//! is corrected by person detections; crowding around the prediction drops
//! the tracker back to appearance-based reacquisition. When the target
//! leaves a camera the search moves through neighbouring cameras with
//! re-identification. A deterministic synthetic world supplies frames and
//! ground truth for evaluation.

pub mod cftracker;
pub mod coordinator;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod inter;
pub mod intra;
pub mod metrics;
pub mod perception;
pub mod seed;
pub mod simworld;

pub use error::{Error, Result};
pub use frame::{Frame, IndexedFrame};
pub use geometry::{iou, BBox};
