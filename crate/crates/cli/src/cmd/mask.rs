use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rm3d_core::sampling::{apply_mask, interp_nearest, random_mask, uniform_mask, SampleMask};
use rm3d_core::RadioMapVolume;

use super::write_file;
use crate::Failure;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Uniform,
    Random,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long, value_enum, default_value_t = Kind::Uniform)]
    pub kind: Kind,
    /// Fraction of cells kept per height layer.
    #[arg(long, default_value_t = 0.1)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mask text file.
    #[arg(long)]
    pub out: PathBuf,
    /// Volume bundle to sample; its dims override --nx/--ny/--nz.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub nx: usize,
    #[arg(long, default_value_t = 256)]
    pub ny: usize,
    #[arg(long, default_value_t = 20)]
    pub nz: usize,
    /// Sparse observation rows `i, j, k, values…` (.rm3d, needs --volume).
    #[arg(long)]
    pub observations: Option<PathBuf>,
    /// Nearest-neighbour interpolated volume (.rm3d, needs --volume).
    #[arg(long)]
    pub interp: Option<PathBuf>,
}

pub fn run(a: &MaskArgs) -> Result<(), Failure> {
    let volume = a.volume.as_ref().map(|p| RadioMapVolume::<f64>::load(p)).transpose()?;
    if volume.is_none() && (a.observations.is_some() || a.interp.is_some()) {
        return Err(Failure::validation("--observations and --interp need --volume"));
    }
    let (nx, ny, nz) = volume.as_ref().map_or((a.nx, a.ny, a.nz), |v| v.dims());
    let mask: SampleMask = match a.kind {
        Kind::Uniform => uniform_mask(nx, ny, nz, a.rate)?,
        Kind::Random => random_mask(nx, ny, nz, a.rate, a.seed)?,
    };
    write_file(&a.out, &mask.to_text())?;

    if let Some(volume) = &volume {
        let (obs, _) = apply_mask(volume, &mask)?;
        if let Some(p) = &a.observations {
            obs.to_raw().save(p)?;
        }
        if let Some(p) = &a.interp {
            let dense = interp_nearest(&obs)?;
            let out = RadioMapVolume::from_parts(
                volume.dims(),
                dense.into_vec(),
                volume.is_normalized(),
                volume.building_mask().to_vec(),
                volume.reachable().to_vec(),
            );
            out.save(p)?;
        }
    }
    for k in 0..nz {
        println!("h{}: {} of {} cells", k + 1, mask.layer(k).len(), nx * ny);
    }
    println!("{} samples -> {}", mask.len(), a.out.display());
    Ok(())
}
