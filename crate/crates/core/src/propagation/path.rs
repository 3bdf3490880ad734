//! Dominant-path construction: line of sight, else the canonical shortest
//! voxel path smoothed by greedy string pulling.
//!
//! The canonical voxel path is defined from the exact shortest-distance field
//! `g` rooted at the transmitter voxel: starting at the receiver voxel,
//! repeatedly step to the lexicographically smallest 26-neighbour `p` with
//! `g(p) + w(p, cur) = g(cur)`. Any search that yields exact `g` on all
//! shortest-path voxels (A* here, full Dijkstra in the volume solver) therefore
//! produces the same path.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::scene::VoxelScene;

use super::los::segment_clear;
use super::{distance, PropagationError};

/// Relative tolerance when testing `g(p) + w = g(cur)`.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DominantPath {
    /// First point is the transmitter, last the receiver.
    pub waypoints: Vec<[f64; 3]>,
    /// Polyline length, meters.
    pub length: f64,
    /// Interior vertices after string pulling.
    pub bends: usize,
    /// Length of the unsmoothed voxel path; `None` for line-of-sight paths.
    pub voxel_path_length: Option<f64>,
}

impl DominantPath {
    pub fn direct(tx: [f64; 3], rx: [f64; 3]) -> Self {
        Self { waypoints: vec![tx, rx], length: distance(tx, rx), bends: 0, voxel_path_length: None }
    }

    fn from_polyline(waypoints: Vec<[f64; 3]>, voxel_path_length: Option<f64>) -> Self {
        let length = waypoints.windows(2).map(|w| distance(w[0], w[1])).sum();
        let bends = waypoints.len() - 2;
        Self { waypoints, length, bends, voxel_path_length }
    }

    pub fn receiver(&self) -> [f64; 3] {
        *self.waypoints.last().expect("non-empty path")
    }

    /// Waypoint the signal arrives from at the receiver.
    pub fn arrival_origin(&self) -> [f64; 3] {
        self.waypoints[self.waypoints.len() - 2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathResult {
    Found(DominantPath),
    Unreachable,
}

impl PathResult {
    pub fn path(&self) -> Option<&DominantPath> {
        match self {
            PathResult::Found(p) => Some(p),
            PathResult::Unreachable => None,
        }
    }

    pub fn is_reachable(&self) -> bool {
        matches!(self, PathResult::Found(_))
    }
}

/// 26-neighbourhood offsets in lexicographic order.
pub(crate) fn neighbour_offsets() -> [(i64, i64, i64); 26] {
    let mut out = [(0, 0, 0); 26];
    let mut n = 0;
    for di in -1..=1 {
        for dj in -1..=1 {
            for dk in -1..=1 {
                if (di, dj, dk) != (0, 0, 0) {
                    out[n] = (di, dj, dk);
                    n += 1;
                }
            }
        }
    }
    out
}

/// Free neighbours of voxel `idx` with their edge weights, in lexicographic order.
pub(crate) fn free_neighbours(scene: &VoxelScene, idx: usize, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let (i, j, k) = scene.voxel_coords(idx);
    let (nx, ny, nz) = (scene.nx() as i64, scene.ny() as i64, scene.nz() as i64);
    let r = scene.resolution();
    const W: [f64; 4] = [0.0, 1.0, std::f64::consts::SQRT_2, 1.732_050_807_568_877_2];
    for (di, dj, dk) in neighbour_offsets() {
        let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
        if a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz {
            continue;
        }
        let (a, b, c) = (a as usize, b as usize, c as usize);
        if scene.is_occupied(a, b, c) {
            continue;
        }
        let order = (di.abs() + dj.abs() + dk.abs()) as usize;
        out.push((scene.voxel_index(a, b, c), r * W[order]));
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    key: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on (key, idx).
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Full single-source shortest distances over free voxels (`INFINITY` where
/// unreachable).
pub(crate) fn distance_field(scene: &VoxelScene, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; scene.voxel_count()];
    let mut done = vec![false; scene.voxel_count()];
    let mut heap = BinaryHeap::new();
    let mut nbrs = Vec::with_capacity(26);
    dist[source] = 0.0;
    heap.push(Entry { key: 0.0, idx: source });
    while let Some(Entry { idx, .. }) = heap.pop() {
        if done[idx] {
            continue;
        }
        done[idx] = true;
        free_neighbours(scene, idx, &mut nbrs);
        for &(n, w) in &nbrs {
            let cand = dist[idx] + w;
            if cand < dist[n] {
                dist[n] = cand;
                heap.push(Entry { key: cand, idx: n });
            }
        }
    }
    dist
}

/// A* from `start` to `goal`, continued until every voxel with
/// `g + h <= C*` is settled so that backtracking sees exact distances.
/// Returns distances that are finite only on settled voxels.
fn astar_field(scene: &VoxelScene, start: usize, goal: usize) -> Option<Vec<f64>> {
    let n = scene.voxel_count();
    let (gi, gj, gk) = scene.voxel_coords(goal);
    let goal_c = scene.voxel_center(gi, gj, gk);
    let h = |idx: usize| {
        let (i, j, k) = scene.voxel_coords(idx);
        distance(scene.voxel_center(i, j, k), goal_c)
    };
    let mut g = vec![f64::INFINITY; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut nbrs = Vec::with_capacity(26);
    let mut best: Option<f64> = None;
    g[start] = 0.0;
    heap.push(Entry { key: h(start), idx: start });
    while let Some(Entry { key, idx }) = heap.pop() {
        if settled[idx] {
            continue;
        }
        if let Some(c) = best {
            if key > c + TIE_EPS * c.max(1.0) {
                break;
            }
        }
        settled[idx] = true;
        if idx == goal {
            best = Some(g[idx]);
        }
        free_neighbours(scene, idx, &mut nbrs);
        for &(m, w) in &nbrs {
            let cand = g[idx] + w;
            if cand < g[m] {
                g[m] = cand;
                heap.push(Entry { key: cand + h(m), idx: m });
            }
        }
    }
    best?;
    for (v, s) in g.iter_mut().zip(&settled) {
        if !s {
            *v = f64::INFINITY;
        }
    }
    Some(g)
}

/// Canonical voxel path `start → goal` from an exact distance field.
pub(crate) fn backtrack(scene: &VoxelScene, dist: &[f64], start: usize, goal: usize) -> Vec<usize> {
    let mut path = vec![goal];
    let mut cur = goal;
    let mut nbrs = Vec::with_capacity(26);
    while cur != start {
        free_neighbours(scene, cur, &mut nbrs);
        let target = dist[cur];
        let tol = TIE_EPS * target.max(1.0);
        let &(prev, _) = nbrs
            .iter()
            .find(|&&(p, w)| dist[p].is_finite() && (dist[p] + w - target).abs() <= tol)
            .expect("exact distance field has a predecessor on every shortest path");
        path.push(prev);
        cur = prev;
    }
    path.reverse();
    path
}

/// Greedy string pulling: drop a waypoint whenever its neighbours see each other.
pub(crate) fn string_pull(scene: &VoxelScene, points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut out = vec![points[0]];
    let mut anchor = 0;
    for i in 1..points.len().saturating_sub(1) {
        if !segment_clear(scene, points[anchor], points[i + 1]) {
            out.push(points[i]);
            anchor = i;
        }
    }
    if points.len() > 1 {
        out.push(points[points.len() - 1]);
    }
    out
}

/// Turns a canonical voxel path into a smoothed dominant path. The first and
/// last voxel centers are replaced by the actual transmitter/receiver points.
pub(crate) fn assemble(scene: &VoxelScene, tx: [f64; 3], rx: [f64; 3], voxels: &[usize], graph_len: f64) -> DominantPath {
    let mut pts = Vec::with_capacity(voxels.len().max(2));
    pts.push(tx);
    if voxels.len() > 2 {
        for &v in &voxels[1..voxels.len() - 1] {
            let (i, j, k) = scene.voxel_coords(v);
            pts.push(scene.voxel_center(i, j, k));
        }
    }
    pts.push(rx);
    DominantPath::from_polyline(string_pull(scene, &pts), Some(graph_len))
}

pub(crate) fn check_free(scene: &VoxelScene, p: [f64; 3]) -> Result<usize, PropagationError> {
    let (i, j, k) = scene.cell_of(p).ok_or(PropagationError::OutOfBounds(p))?;
    if scene.is_occupied(i, j, k) {
        return Err(PropagationError::Occupied(p));
    }
    Ok(scene.voxel_index(i, j, k))
}

pub fn dominant_path(scene: &VoxelScene, tx: [f64; 3], rx: [f64; 3]) -> Result<PathResult, PropagationError> {
    let start = check_free(scene, tx)?;
    let goal = check_free(scene, rx)?;
    if segment_clear(scene, tx, rx) {
        return Ok(PathResult::Found(DominantPath::direct(tx, rx)));
    }
    let Some(g) = astar_field(scene, start, goal) else {
        return Ok(PathResult::Unreachable);
    };
    let voxels = backtrack(scene, &g, start, goal);
    Ok(PathResult::Found(assemble(scene, tx, rx, &voxels, g[goal])))
}
