//! Pixel-space diffusion: noise schedules, DDPM/DDIM steps, reconstruction
//! guidance, seeded generation, height-wise autoregression and a forward-only
//! denoiser network.
//!
//! Latents and conditions are channel-first `[C, nx, ny, nz]`.

mod denoiser;
mod guidance;
mod net;
mod sampler;
mod schedule;

use std::path::PathBuf;

pub use denoiser::{AnalyticGaussian, ConditionTensor, Denoiser, FnDenoiser};
pub use guidance::{guided_correction, masked_discrepancy, GuidanceConfig};
pub use net::{
    load_denoiser, sinusoidal_embedding, Activation, DenoiserSpec, LayerOp, LayerSpec, NetworkDenoiser, ParityVector,
};
pub use sampler::{
    autoregressive_generate, autoregressive_generate_with, concat_depth, generate, slice_depth, GenerateOptions,
    Generation, GenerationReport, GuidanceRecord, Sampler, SlabLayout, StepRecord,
};
pub use schedule::{
    ddim_sigma, ddim_step, ddim_step_from_x0, ddpm_step, eps_from_x0, forward_sample, linear_schedule, predict_x0,
    simple_loss, DdpmVariance, LossKind, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS,
};

use crate::rm3d::FormatError;
use crate::tensor::ShapeError;

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("timestep {t} outside the schedule of {steps} steps")]
    Timestep { t: usize, steps: usize },
    #[error("invalid step pair t={t} -> t_prev={t_prev}")]
    StepPair { t: usize, t_prev: usize },
    #[error("eta {0} outside [0, 1]")]
    Eta(f64),
    #[error("sampler: {0}")]
    Sampler(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("condition has {found} channels, denoiser expects {expected}")]
    ConditionChannels { expected: usize, found: usize },
    #[error("descriptor line {line}: {message}")]
    Descriptor { line: usize, message: String },
    #[error("layer {layer}: {message}")]
    Layer { layer: String, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
