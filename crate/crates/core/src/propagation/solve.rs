use std::fmt::Write as _;

use rayon::prelude::*;

use crate::scene::{TxConfig, VoxelScene};
use crate::volume::{Channel, RadioMapVolume, CHANNELS};

use super::los::segment_clear;
use super::path::{assemble, backtrack, check_free, distance_field};
use super::{channel_from_path, DominantPath, MaterialParams, PathResult, PropagationError, VoxelChannel};

/// Shortest-path tree of one transmitter, reused for every receiver voxel.
/// Paths equal [`super::dominant_path`] for the same endpoints.
pub struct VolumeSolver<'a> {
    scene: &'a VoxelScene,
    tx: TxConfig,
    start: usize,
    field: Vec<f64>,
}

impl<'a> VolumeSolver<'a> {
    pub fn new(scene: &'a VoxelScene, tx: TxConfig) -> Result<Self, PropagationError> {
        if !(tx.frequency > 0.0) {
            return Err(PropagationError::NonPositive { distance: 1.0, frequency: tx.frequency });
        }
        let start = check_free(scene, tx.position)?;
        Ok(Self { scene, tx, start, field: distance_field(scene, start) })
    }

    pub fn scene(&self) -> &VoxelScene {
        self.scene
    }

    /// Dominant path to the center of voxel `(i, j, k)`, which must be free.
    pub fn path_to(&self, i: usize, j: usize, k: usize) -> PathResult {
        let rx = self.scene.voxel_center(i, j, k);
        let goal = self.scene.voxel_index(i, j, k);
        debug_assert!(!self.scene.is_occupied(i, j, k));
        if segment_clear(self.scene, self.tx.position, rx) {
            return PathResult::Found(DominantPath::direct(self.tx.position, rx));
        }
        if !self.field[goal].is_finite() {
            return PathResult::Unreachable;
        }
        let voxels = backtrack(self.scene, &self.field, self.start, goal);
        PathResult::Found(assemble(self.scene, self.tx.position, rx, &voxels, self.field[goal]))
    }

    pub fn channel_at(&self, i: usize, j: usize, k: usize, mat: &MaterialParams) -> VoxelChannel {
        channel_from_path(&self.path_to(i, j, k), &self.tx, mat, self.scene.resolution())
    }
}

/// Raw (un-normalized) volume for one transmitter. Building voxels hold
/// zeros and are flagged in the building mask; unreachable free voxels hold
/// zeros and are cleared in the reachable mask.
pub fn solve_volume(
    scene: &VoxelScene,
    tx: &TxConfig,
    mat: &MaterialParams,
) -> Result<RadioMapVolume<f64>, PropagationError> {
    mat.validate()?;
    let solver = VolumeSolver::new(scene, *tx)?;
    let channels: Vec<Option<VoxelChannel>> = (0..scene.voxel_count())
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = scene.voxel_coords(idx);
            (!scene.is_occupied(i, j, k)).then(|| solver.channel_at(i, j, k, mat))
        })
        .collect();

    let n = scene.voxel_count();
    let mut data = vec![0.0; n * CHANNELS];
    let mut building = vec![false; n];
    let mut reachable = vec![false; n];
    for (idx, ch) in channels.into_iter().enumerate() {
        match ch {
            None => building[idx] = true,
            Some(ch) => {
                reachable[idx] = ch.reachable;
                let base = idx * CHANNELS;
                data[base + Channel::Pathgain.index()] = ch.pathgain;
                data[base + Channel::DoaAzi.index()] = ch.doa_azi;
                data[base + Channel::DoaEle.index()] = ch.doa_ele;
                data[base + Channel::Toa.index()] = ch.toa;
            }
        }
    }
    Ok(RadioMapVolume::from_parts(scene.dims(), data, false, building, reachable))
}

/// Dominant-path polylines of every free voxel in layer `k`, one record per
/// line: `i,j,k,x y z;x y z;...` or `i,j,k,unreachable`.
pub fn write_ray_records(solver: &VolumeSolver<'_>, k: usize) -> String {
    let scene = solver.scene();
    let records: Vec<String> = (0..scene.nx() * scene.ny())
        .into_par_iter()
        .filter_map(|ij| {
            let (i, j) = (ij / scene.ny(), ij % scene.ny());
            if scene.is_occupied(i, j, k) {
                return None;
            }
            let mut line = format!("{i},{j},{k},");
            match solver.path_to(i, j, k) {
                PathResult::Unreachable => line.push_str("unreachable"),
                PathResult::Found(p) => {
                    for (n, w) in p.waypoints.iter().enumerate() {
                        if n > 0 {
                            line.push(';');
                        }
                        write!(line, "{:?} {:?} {:?}", w[0], w[1], w[2]).unwrap();
                    }
                }
            }
            Some(line)
        })
        .collect();
    let mut out = records.join("\n");
    if !out.is_empty() {
        out.push('\n');
    }
    out
}
