//! Exact segment/voxel traversal in the style of Amanatides & Woo.
//!
//! A segment is blocked iff some part of it of positive length lies in the
//! interior of the occupied region. Grazing a face, edge or corner of an
//! occupied voxel does not block, which keeps every 26-neighbour move between
//! free voxel centers visible. Crossings of several grid planes at the same
//! parameter (within [`T_EPS`]) are stepped together, so a segment through a
//! shared corner never visits the side voxels.

use crate::scene::VoxelScene;

use super::PropagationError;

/// Parameter tolerance for simultaneous plane crossings and zero-length runs.
const T_EPS: f64 = 1e-9;

/// True iff the segment `a → b` does not pass through occupied space.
pub fn los_visible(scene: &VoxelScene, a: [f64; 3], b: [f64; 3]) -> Result<bool, PropagationError> {
    for p in [a, b] {
        if !scene.contains(p) {
            return Err(PropagationError::OutOfBounds(p));
        }
    }
    Ok(segment_clear(scene, a, b))
}

/// Per-axis traversal state.
#[derive(Clone, Copy)]
struct Axis {
    /// Current cell; meaningful only when `moving`.
    cell: i64,
    step: i64,
    t_next: f64,
    t_delta: f64,
    moving: bool,
    /// For a static axis lying exactly on a grid plane: both neighbouring
    /// cells touch the segment.
    on_plane: bool,
}

impl Axis {
    fn new(origin: f64, delta: f64, res: f64) -> Self {
        let u = origin / res;
        if delta > 0.0 {
            let cell = u.floor() as i64;
            let boundary = (cell + 1) as f64 * res;
            Axis { cell, step: 1, t_next: (boundary - origin) / delta, t_delta: res / delta, moving: true, on_plane: false }
        } else if delta < 0.0 {
            let cell = u.ceil() as i64 - 1;
            let boundary = cell as f64 * res;
            Axis { cell, step: -1, t_next: (boundary - origin) / delta, t_delta: -res / delta, moving: true, on_plane: false }
        } else {
            let on_plane = u.fract() == 0.0;
            Axis { cell: u.floor() as i64, step: 0, t_next: f64::INFINITY, t_delta: f64::INFINITY, moving: false, on_plane }
        }
    }

    /// Candidate cells along this axis for the current run.
    fn cells(&self) -> ([i64; 2], usize) {
        if self.on_plane {
            ([self.cell - 1, self.cell], 2)
        } else {
            ([self.cell, 0], 1)
        }
    }
}

pub(crate) fn segment_clear(scene: &VoxelScene, a: [f64; 3], b: [f64; 3]) -> bool {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    if d == [0.0; 3] {
        return !point_blocked(scene, a);
    }
    let res = scene.resolution();
    let mut axes = [Axis::new(a[0], d[0], res), Axis::new(a[1], d[1], res), Axis::new(a[2], d[2], res)];
    let mut t_cur = 0.0;
    loop {
        let t_exit = axes.iter().map(|ax| ax.t_next).fold(1.0f64, f64::min);
        if t_exit - t_cur > T_EPS && run_blocked(scene, &axes) {
            return false;
        }
        if t_exit >= 1.0 - T_EPS {
            return true;
        }
        for ax in axes.iter_mut() {
            if ax.moving && ax.t_next <= t_exit + T_EPS {
                ax.cell += ax.step;
                ax.t_next += ax.t_delta;
            }
        }
        t_cur = t_exit;
    }
}

/// A run is blocked only if every voxel it touches is occupied (more than one
/// voxel is touched only when the segment lies on a grid plane).
fn run_blocked(scene: &VoxelScene, axes: &[Axis; 3]) -> bool {
    let (xs, nx) = axes[0].cells();
    let (ys, ny) = axes[1].cells();
    let (zs, nz) = axes[2].cells();
    for &x in &xs[..nx] {
        for &y in &ys[..ny] {
            for &z in &zs[..nz] {
                if !scene.is_occupied_signed(x, y, z) {
                    return false;
                }
            }
        }
    }
    true
}

fn point_blocked(scene: &VoxelScene, p: [f64; 3]) -> bool {
    let axes = [Axis::new(p[0], 0.0, scene.resolution()), Axis::new(p[1], 0.0, scene.resolution()), Axis::new(p[2], 0.0, scene.resolution())];
    run_blocked(scene, &axes)
}
