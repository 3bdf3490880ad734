//! Per-voxel pathgain, time of arrival and direction of arrival from a scene
//! and a transmitter.
//!
//! Two tiers: a receiver with line of sight gets the straight segment;
//! otherwise the receiver follows the shortest 26-connected path through free
//! voxels, shortened by string pulling. Pathgain is the free-space loss of the
//! polyline length plus a fixed diffraction loss per remaining bend.

mod channel;
mod los;
mod path;
mod solve;

pub use channel::{channel_from_path, VoxelChannel};
pub use los::los_visible;
pub use path::{dominant_path, DominantPath, PathResult};
pub use solve::{solve_volume, write_ray_records, VolumeSolver};

/// Speed of light in meters per nanosecond.
pub const SPEED_OF_LIGHT_M_PER_NS: f64 = 0.299_792_458;

/// Speed of light in meters per second (exact integer, used for delays).
pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

/// Propagation delay in nanoseconds for `length_m` meters.
pub fn time_of_flight_ns(length_m: f64) -> f64 {
    length_m * 1e9 / SPEED_OF_LIGHT_M_PER_S
}

/// `20·log10(4π/c)` with `c` in m/s, rounded as commonly tabulated.
pub const FSPL_CONSTANT_DB: f64 = 147.552;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PropagationError {
    #[error("point {0:?} lies outside the scene")]
    OutOfBounds([f64; 3]),
    #[error("point {0:?} lies in an occupied voxel")]
    Occupied([f64; 3]),
    #[error("free-space loss needs positive distance and frequency, got d={distance} m, f={frequency} Hz")]
    NonPositive { distance: f64, frequency: f64 },
    #[error("material losses must be non-negative")]
    NegativeLoss,
}

/// Free-space path loss in dB: `20·log10(d) + 20·log10(f) − 147.552`.
pub fn fspl(distance_m: f64, frequency_hz: f64) -> Result<f64, PropagationError> {
    if !(distance_m > 0.0) || !(frequency_hz > 0.0) {
        return Err(PropagationError::NonPositive { distance: distance_m, frequency: frequency_hz });
    }
    Ok(20.0 * distance_m.log10() + 20.0 * frequency_hz.log10() - FSPL_CONSTANT_DB)
}

/// Facade loss parameters. Only the per-bend diffraction loss enters the
/// default solver; the other two are carried for alternative solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    pub diffraction_loss_per_bend: f64,
    pub transmission_loss: f64,
    pub reflection_loss: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self { diffraction_loss_per_bend: 8.0, transmission_loss: 20.0, reflection_loss: 9.0 }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), PropagationError> {
        if self.diffraction_loss_per_bend >= 0.0 && self.transmission_loss >= 0.0 && self.reflection_loss >= 0.0 {
            Ok(())
        } else {
            Err(PropagationError::NegativeLoss)
        }
    }
}

pub(crate) fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
