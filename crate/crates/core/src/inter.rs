//! Cross-camera search for a target that left its camera.
//!
//! Candidate cameras grow ring by ring through the adjacency graph: the
//! first search iteration looks at direct neighbours of the camera the
//! target left, the next one adds cameras two hops away, and so on. Once the
//! rings stop growing (or nothing is reachable) every other camera is
//! searched. All person crops from all candidate cameras form one pool and
//! the single most similar crop wins if it clears the similarity threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::IndexedFrame;
use crate::geometry::BBox;
use crate::perception::{best_match, detect_persons, embed, similarity, AppearanceVector, Detector, Embedder, FrameContext};

pub const DEFAULT_SEARCH_S_MIN: f64 = 0.6;

/// Directed camera adjacency. Neighbour lists keep their declared order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct CameraGraph {
    cameras: Vec<String>,
    adjacency: BTreeMap<String, Vec<String>>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    cameras: Vec<String>,
    #[serde(default)]
    adjacency: BTreeMap<String, Vec<String>>,
}

impl TryFrom<RawGraph> for CameraGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        CameraGraph::new(raw.cameras, raw.adjacency)
    }
}

impl From<CameraGraph> for RawGraph {
    fn from(g: CameraGraph) -> Self {
        RawGraph { cameras: g.cameras, adjacency: g.adjacency }
    }
}

impl CameraGraph {
    pub fn new(cameras: Vec<String>, adjacency: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, c) in cameras.iter().enumerate() {
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::invalid(format!("camera {c:?} declared twice")));
            }
        }
        for (from, tos) in &adjacency {
            if !index.contains_key(from) {
                return Err(Error::invalid(format!("adjacency source {from:?} is not a declared camera")));
            }
            for to in tos {
                if !index.contains_key(to) {
                    return Err(Error::invalid(format!("adjacency target {to:?} of {from:?} is not a declared camera")));
                }
                if to == from {
                    return Err(Error::invalid(format!("self-loop on {from:?}")));
                }
            }
        }
        Ok(CameraGraph { cameras, adjacency, index })
    }

    /// A graph without edges; every search falls back to all cameras.
    pub fn unconnected(cameras: Vec<String>) -> Result<Self> {
        CameraGraph::new(cameras, BTreeMap::new())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        CameraGraph::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn cameras(&self) -> &[String] {
        &self.cameras
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn neighbors(&self, id: &str) -> &[String] {
        self.adjacency.get(id).map_or(&[], Vec::as_slice)
    }

    /// Hop distance from `origin` to every camera (declaration order), `None` when unreachable.
    pub fn hop_distances(&self, origin: &str) -> Result<Vec<Option<u32>>> {
        let start = *self
            .index
            .get(origin)
            .ok_or_else(|| Error::invalid(format!("unknown camera {origin:?}")))?;
        let mut dist = vec![None; self.cameras.len()];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for v in self.neighbors(&self.cameras[u]) {
                let v = self.index[v];
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }

    /// Longest shortest-path distance between any ordered pair of mutually
    /// reachable cameras; 0 for a graph without edges.
    pub fn diameter(&self) -> u32 {
        self.cameras
            .iter()
            .filter_map(|c| self.hop_distances(c).ok())
            .flat_map(|d| d.into_iter().flatten())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchState {
    pub origin: String,
    pub iteration: u32,
    pub visited: BTreeSet<String>,
}

impl SearchState {
    pub fn new(origin: impl Into<String>) -> Self {
        SearchState { origin: origin.into(), iteration: 1, visited: BTreeSet::new() }
    }
}

/// Cameras to search at the state's current iteration.
pub fn recommend_cameras(graph: &CameraGraph, state: &SearchState) -> Result<Vec<String>> {
    if state.iteration < 1 {
        return Err(Error::invalid("search iteration starts at 1"));
    }
    let dist = graph.hop_distances(&state.origin)?;
    let mut ring: Vec<(u32, usize)> = dist
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.filter(|&d| d >= 1 && d <= state.iteration).map(|d| (d, i)))
        .collect();
    if ring.is_empty() || state.iteration > graph.diameter() {
        return Ok(graph.cameras.iter().filter(|c| **c != state.origin).cloned().collect());
    }
    ring.sort();
    Ok(ring.into_iter().map(|(_, i)| graph.cameras[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub camera: String,
    pub frame_index: u64,
    pub bbox: BBox,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub candidates: Vec<String>,
    pub hit: Option<SearchHit>,
    /// Candidate cameras that had no frame this tick.
    pub missing: Vec<String>,
    /// Candidate cameras whose detector or embedder failed, with the error text.
    pub skipped: Vec<(String, String)>,
    /// Size of the pooled candidate set.
    pub pooled: usize,
}

/// One search iteration over the recommended cameras. On a miss the
/// iteration counter advances; on a hit the state is left as it was.
#[allow(clippy::too_many_arguments)]
pub fn search_step(
    graph: &CameraGraph,
    state: &mut SearchState,
    frames: &BTreeMap<String, IndexedFrame>,
    detector: &dyn Detector,
    embedder: &dyn Embedder,
    target: &AppearanceVector,
    s_min: f64,
) -> Result<SearchOutcome> {
    let candidates = recommend_cameras(graph, state)?;
    let present: Vec<(&String, &IndexedFrame)> =
        candidates.iter().filter_map(|c| frames.get(c).map(|f| (c, f))).collect();
    let missing = candidates.iter().filter(|c| !frames.contains_key(*c)).cloned().collect();

    let per_camera: Vec<(&String, u64, Result<Vec<(BBox, f64)>>)> = present
        .par_iter()
        .map(|&(cam, f)| {
            let ctx = FrameContext::new(cam, f.index, &f.frame);
            let scored = (|| {
                let mut out = Vec::new();
                for d in detect_persons(detector, &ctx)? {
                    let Some(bbox) = d.bbox.clip_to(f.frame.width() as f64, f.frame.height() as f64) else { continue };
                    if f.frame.pixel_rect(&bbox).is_empty() {
                        continue;
                    }
                    let v = embed(embedder, &ctx, &bbox)?;
                    out.push((bbox, similarity(&v, target)));
                }
                Ok(out)
            })();
            (cam, f.index, scored)
        })
        .collect();

    let mut skipped = Vec::new();
    let mut pool: Vec<(&String, u64, BBox, f64)> = Vec::new();
    for (cam, index, scored) in per_camera {
        state.visited.insert(cam.clone());
        match scored {
            Ok(list) => pool.extend(list.into_iter().map(|(b, s)| (cam, index, b, s))),
            Err(e) => {
                log::warn!("search skipped camera {cam}: {e}");
                skipped.push((cam.clone(), e.to_string()));
            }
        }
    }

    let hit = best_match(pool.iter().map(|p| p.3), s_min).map(|(i, s)| SearchHit {
        camera: pool[i].0.clone(),
        frame_index: pool[i].1,
        bbox: pool[i].2,
        similarity: s,
    });
    if hit.is_none() {
        state.iteration += 1;
    }
    let pooled = pool.len();
    drop(pool);
    drop(present);
    Ok(SearchOutcome { candidates, hit, missing, skipped, pooled })
}
