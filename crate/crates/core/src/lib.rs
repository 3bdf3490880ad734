//! Volumetric urban radio maps: scene generation, dominant-path propagation,
//! dataset packaging, sparse sampling, diffusion sampling and evaluation.
//!
//! Numeric code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for common use. Ray geometry is always `f64`.

pub mod dataset;
pub mod diffusion;
pub mod image_io;
pub mod metrics;
pub mod propagation;
pub mod rm3d;
pub mod sampling;
pub mod scalar;
pub mod scene;
pub mod tensor;
pub mod volume;

pub use metrics::{evaluate_volume, MetricReport, SsimConfig};
pub use propagation::{dominant_path, solve_volume, MaterialParams};
pub use scalar::Real;
pub use scene::{generate_scene, SceneParams, TxConfig, VoxelScene};
pub use tensor::Tensor;
pub use volume::{Channel, RadioMapVolume};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Volume32 = volume::RadioMapVolume<f32>;
pub type Volume64 = volume::RadioMapVolume<f64>;
pub type NoiseSchedule32 = diffusion::NoiseSchedule<f32>;
pub type NoiseSchedule64 = diffusion::NoiseSchedule<f64>;
pub type Observations32 = sampling::SparseObservations<f32>;
pub type Observations64 = sampling::SparseObservations<f64>;
pub type Guidance32 = diffusion::GuidanceConfig<f32>;
pub type Guidance64 = diffusion::GuidanceConfig<f64>;
pub type Network32 = diffusion::NetworkDenoiser<f32>;
pub type Network64 = diffusion::NetworkDenoiser<f64>;
