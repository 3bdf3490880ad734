use std::f64::consts::{FRAC_PI_2, TAU};

use crate::scene::TxConfig;

use super::{distance, fspl, time_of_flight_ns, MaterialParams, PathResult};

/// Channel descriptors of one receiver voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelChannel {
    /// dB (negative pathloss).
    pub pathgain: f64,
    /// Nanoseconds.
    pub toa: f64,
    /// Radians in `[0, 2π)`.
    pub doa_azi: f64,
    /// Polar angle from +z, radians in `[0, π]`.
    pub doa_ele: f64,
    pub reachable: bool,
}

impl VoxelChannel {
    /// Sentinel for receivers that cannot be reached; all values zero.
    pub const UNREACHABLE: VoxelChannel =
        VoxelChannel { pathgain: 0.0, toa: 0.0, doa_azi: 0.0, doa_ele: 0.0, reachable: false };
}

/// Composes the channel of a dominant path.
///
/// Distances below `resolution / 2` are raised to `resolution / 2` before the
/// free-space term so the transmitter voxel keeps a finite pathgain. The
/// arrival direction is the unit vector from the receiver toward the previous
/// waypoint; a degenerate (zero-length) final segment reports azimuth 0 and
/// elevation π/2.
pub fn channel_from_path(path: &PathResult, tx: &TxConfig, mat: &MaterialParams, resolution: f64) -> VoxelChannel {
    let Some(path) = path.path() else {
        return VoxelChannel::UNREACHABLE;
    };
    let effective = path.length.max(resolution / 2.0);
    let loss = fspl(effective, tx.frequency).expect("positive distance and frequency")
        + path.bends as f64 * mat.diffraction_loss_per_bend;
    let (doa_azi, doa_ele) = arrival_angles(path.receiver(), path.arrival_origin());
    VoxelChannel { pathgain: -loss, toa: time_of_flight_ns(path.length), doa_azi, doa_ele, reachable: true }
}

pub(crate) fn arrival_angles(rx: [f64; 3], from: [f64; 3]) -> (f64, f64) {
    let len = distance(rx, from);
    if len == 0.0 {
        return (0.0, FRAC_PI_2);
    }
    let u = [(from[0] - rx[0]) / len, (from[1] - rx[1]) / len, (from[2] - rx[2]) / len];
    let mut azi = u[1].atan2(u[0]);
    if azi < 0.0 {
        azi += TAU;
    }
    if azi >= TAU {
        azi = 0.0;
    }
    (azi, u[2].clamp(-1.0, 1.0).acos())
}
