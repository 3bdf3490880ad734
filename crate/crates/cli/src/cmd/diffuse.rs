use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rm3d_core::dataset::quantize_value;
use rm3d_core::diffusion::{
    autoregressive_generate, generate, linear_schedule, load_denoiser, AnalyticGaussian, ConditionTensor,
    DdpmVariance, Denoiser, DenoiserSpec, GenerateOptions, GenerationReport, GuidanceConfig, NetworkDenoiser,
    Sampler, SlabLayout, DEFAULT_BETA_END, DEFAULT_BETA_START,
};
use rm3d_core::image_io::{heat_color, write_rgb_png};
use rm3d_core::rm3d::RawTensor;
use rm3d_core::sampling::SampleMask;
use rm3d_core::scene::{rasterize_condition_maps, DEFAULT_MAX_BUILDING_HEIGHT};
use rm3d_core::{RadioMapVolume, Real, Tensor, VoxelScene};

use super::{create_dir, load_tx, write_file, RUN_CONFIG};
use crate::Failure;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplerKind {
    Ddim,
    Ddpm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DenoiserKind {
    /// Closed-form predictor for i.i.d. N(mu, sigma²) data.
    Analytic,
    /// Randomly initialized small U-Net.
    Unet,
    /// Descriptor and weights from --model/--weights.
    File,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct DiffuseArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SamplerKind::Ddim)]
    pub sampler: SamplerKind,
    /// DDIM step count.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    /// Use the posterior variance for DDPM instead of beta.
    #[arg(long = "ddpm-posterior")]
    pub ddpm_posterior: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Diffusion schedule length T.
    #[arg(long, default_value_t = 1000)]
    pub timesteps: usize,
    #[arg(long, default_value_t = 32)]
    pub nx: usize,
    #[arg(long, default_value_t = 32)]
    pub ny: usize,
    #[arg(long, default_value_t = 4)]
    pub nz: usize,
    #[arg(long, value_enum, default_value_t = DenoiserKind::Analytic)]
    pub denoiser: DenoiserKind,
    /// Latent channels for analytic and unet denoisers.
    #[arg(long, default_value_t = 4)]
    pub latent: usize,
    #[arg(long, default_value_t = 0.5)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
    /// U-Net base width.
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    /// Denoiser descriptor text file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Denoiser weights bundle.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Scene directory for condition maps; its dims override --nx/--ny/--nz.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long = "tx-index", default_value_t = 0)]
    pub tx_index: usize,
    /// Dense guidance target volume (e.g. from `rm3d mask --interp`).
    #[arg(long = "guide-volume")]
    pub guide_volume: Option<PathBuf>,
    /// Observation mask text file from `rm3d mask`.
    #[arg(long = "guide-mask")]
    pub guide_mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Guidance acts on timesteps 1..=floor(fraction·T).
    #[arg(long = "guide-fraction", default_value_t = 0.25)]
    pub guide_fraction: f64,
    /// Height-wise slabs generated autoregressively.
    #[arg(long, default_value_t = 1)]
    pub slabs: usize,
    /// 1-based heights to render as heatmaps, comma-separated (default all).
    #[arg(long)]
    pub slices: Option<String>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
}

pub fn run(a: &DiffuseArgs, config: &str) -> Result<(), Failure> {
    match a.precision {
        Precision::F32 => run_typed::<f32>(a, config),
        Precision::F64 => run_typed::<f64>(a, config),
    }
}

fn sampler(a: &DiffuseArgs) -> Sampler {
    match a.sampler {
        SamplerKind::Ddim => Sampler::Ddim { eta: a.eta, steps: a.steps },
        SamplerKind::Ddpm => Sampler::Ddpm {
            variance: if a.ddpm_posterior { DdpmVariance::Posterior } else { DdpmVariance::Beta },
        },
    }
}

fn condition<T: Real>(a: &DiffuseArgs) -> Result<ConditionTensor<T>, Failure> {
    let Some(dir) = &a.scene else {
        return Ok(ConditionTensor::empty(a.nx, a.ny, a.nz));
    };
    let scene = VoxelScene::load(dir)?;
    let txs = load_tx(dir)?;
    let tx = txs
        .get(a.tx_index)
        .ok_or_else(|| Failure::validation(format!("--tx-index {} but the scene has {} transmitters", a.tx_index, txs.len())))?;
    let maps = rasterize_condition_maps::<T>(&scene, tx, DEFAULT_MAX_BUILDING_HEIGHT)?;
    Ok(ConditionTensor::from_maps(&maps, scene.nz()))
}

fn denoiser<T: Real>(a: &DiffuseArgs, cond_channels: usize) -> Result<Box<dyn Denoiser<T>>, Failure> {
    Ok(match a.denoiser {
        DenoiserKind::Analytic => Box::new(AnalyticGaussian::new(T::of(a.mu), T::of(a.sigma), a.latent)?),
        DenoiserKind::Unet => {
            let extra = if a.slabs > 1 { a.latent } else { 0 };
            let spec = DenoiserSpec::small_unet(a.latent, cond_channels + extra, a.width, 16);
            Box::new(NetworkDenoiser::<T>::random(spec, a.seed)?)
        }
        DenoiserKind::File => {
            let (Some(m), Some(w)) = (&a.model, &a.weights) else {
                return Err(Failure::validation("--denoiser file needs --model and --weights"));
            };
            Box::new(load_denoiser::<T>(m, w)?)
        }
    })
}

fn guidance<T: Real>(
    a: &DiffuseArgs,
    latent: usize,
    dims: (usize, usize, usize),
) -> Result<Option<GuidanceConfig<T>>, Failure> {
    let (vol, mask) = match (&a.guide_volume, &a.guide_mask) {
        (None, None) => return Ok(None),
        (Some(v), Some(m)) => (v, m),
        _ => return Err(Failure::validation("--guide-volume and --guide-mask go together")),
    };
    if latent != 4 {
        return Err(Failure::validation(format!("guidance needs 4 latent channels, denoiser has {latent}")));
    }
    let target = RadioMapVolume::<T>::load(vol)?;
    let text = std::fs::read_to_string(mask).map_err(|e| Failure::validation(format!("{}: {e}", mask.display())))?;
    let mask = SampleMask::parse(&text)?;
    if target.dims() != dims || mask.dims() != dims {
        return Err(Failure::validation(format!(
            "guidance dims {:?} / mask dims {:?} do not match sample dims {dims:?}",
            target.dims(),
            mask.dims()
        )));
    }
    let ind = mask.indicator::<T>();
    let mut m = Vec::with_capacity(4 * ind.len());
    for _ in 0..4 {
        m.extend_from_slice(ind.data());
    }
    let m = Tensor::from_vec(vec![4, dims.0, dims.1, dims.2], m).expect("mask shape");
    let lambda = GuidanceConfig::<T>::last_fraction(a.timesteps, a.lambda, a.guide_fraction);
    Ok(Some(GuidanceConfig::new(lambda, m, target.to_channel_first())?))
}

fn heights(spec: &Option<String>, nz: usize) -> Result<Vec<usize>, Failure> {
    let Some(s) = spec else { return Ok((0..nz).collect()) };
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| match p.parse::<usize>() {
            Ok(h) if (1..=nz).contains(&h) => Ok(h - 1),
            _ => Err(Failure::validation(format!("--slices: {p:?} is not a height in 1..={nz}"))),
        })
        .collect()
}

/// `c<channel>_h<height>.png`, x along columns and y along rows.
fn write_heatmaps<T: Real>(dir: &Path, sample: &Tensor<T>, ks: &[usize]) -> Result<usize, Failure> {
    let s = sample.shape();
    let (c, nx, ny, nz) = (s[0], s[1], s[2], s[3]);
    let mut n = 0;
    for ch in 0..c {
        for &k in ks {
            let mut rgb = vec![0u8; nx * ny * 3];
            for i in 0..nx {
                for j in 0..ny {
                    let v = sample.data()[((ch * nx + i) * ny + j) * nz + k].as_f64();
                    let px = (j * nx + i) * 3;
                    rgb[px..px + 3].copy_from_slice(&heat_color(quantize_value(v)));
                }
            }
            write_rgb_png(&dir.join(format!("c{ch}_h{}.png", k + 1)), nx, ny, &rgb)?;
            n += 1;
        }
    }
    Ok(n)
}

fn guidance_text(reports: &[GenerationReport]) -> String {
    let mut out = String::from("slab,t,before,after\n");
    for (d, r) in reports.iter().enumerate() {
        for g in &r.guidance {
            writeln!(out, "{d},{},{:?},{:?}", g.t, g.before, g.after).unwrap();
        }
    }
    out
}

fn timing_text(reports: &[GenerationReport]) -> String {
    let mut out = String::from("slab,step,time_ms\n");
    for (d, r) in reports.iter().enumerate() {
        for s in &r.steps {
            writeln!(out, "{d},{},{:.6}", s.step, s.time_ms).unwrap();
        }
    }
    out
}

fn run_typed<T: Real>(a: &DiffuseArgs, config: &str) -> Result<(), Failure> {
    let cond = condition::<T>(a)?;
    let dims = cond.spatial();
    let den = denoiser::<T>(a, cond.channels())?;
    let latent = den.latent_channels();
    let sched = linear_schedule::<T>(a.timesteps, DEFAULT_BETA_START, DEFAULT_BETA_END)?;
    let guide = guidance::<T>(a, latent, dims)?;
    let ks = heights(&a.slices, dims.2)?;
    let opts = GenerateOptions { sampler: sampler(a), guidance: guide.as_ref(), seed: a.seed };

    let (sample, reports) = if a.slabs > 1 {
        if dims.2 % a.slabs != 0 {
            return Err(Failure::validation(format!("--slabs {} does not divide {} heights", a.slabs, dims.2)));
        }
        let layout = SlabLayout { slabs: a.slabs, depth: dims.2 / a.slabs };
        autoregressive_generate(den.as_ref(), &cond, &sched, &opts, layout)?
    } else {
        let g = generate(den.as_ref(), &cond, &sched, &opts)?;
        (g.sample, vec![g.report])
    };

    create_dir(&a.out)?;
    RawTensor::from_real(&sample).save(a.out.join("sample.rm3d"))?;
    if let Some(v) = RadioMapVolume::from_channel_first(&sample, true) {
        v.save(&a.out.join("volume.rm3d"))?;
    }
    write_file(&a.out.join("timing.csv"), &timing_text(&reports))?;
    if guide.is_some() {
        write_file(&a.out.join("guidance.csv"), &guidance_text(&reports))?;
    }
    let heat = a.out.join("heatmaps");
    create_dir(&heat)?;
    let n = write_heatmaps(&heat, &sample, &ks)?;
    write_file(&a.out.join(RUN_CONFIG), config)?;
    let total: f64 = reports.iter().map(|r| r.total_ms).sum();
    let steps: usize = reports.iter().map(|r| r.steps.len()).sum();
    println!("{steps} denoising steps in {total:.1} ms, {n} heatmaps -> {}", a.out.display());
    Ok(())
}
