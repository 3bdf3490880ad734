use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    ddim_sigma, ddim_step_from_x0, ddpm_step, eps_from_x0, guided_correction, masked_discrepancy, predict_x0,
    ConditionTensor, DdpmVariance, Denoiser, DiffusionError, GuidanceConfig, NoiseSchedule,
};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    /// Every timestep `T, T-1, …, 1`.
    Ddpm { variance: DdpmVariance },
    /// `steps` timesteps `t_i = floor(i · T / steps)`, visited downwards to 0.
    Ddim { eta: f64, steps: usize },
}

impl Sampler {
    /// `(t, t_prev)` pairs in visiting order.
    pub fn timesteps(&self, total: usize) -> Result<Vec<(usize, usize)>, DiffusionError> {
        match *self {
            Sampler::Ddpm { .. } => Ok((1..=total).rev().map(|t| (t, t - 1)).collect()),
            Sampler::Ddim { eta, steps } => {
                if steps == 0 || steps > total {
                    return Err(DiffusionError::Sampler(format!("{steps} DDIM steps for a {total}-step schedule")));
                }
                if !(0.0..=1.0).contains(&eta) {
                    return Err(DiffusionError::Eta(eta));
                }
                let ts: Vec<usize> = (0..=steps).map(|i| i * total / steps).collect();
                Ok((1..=steps).rev().map(|i| (ts[i], ts[i - 1])).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenerateOptions<'a, T> {
    pub sampler: Sampler,
    pub guidance: Option<&'a GuidanceConfig<T>>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: usize,
    pub t_prev: usize,
    pub time_ms: f64,
}

/// Masked squared discrepancy of `x̂0` before and after the guidance update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceRecord {
    pub t: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationReport {
    pub steps: Vec<StepRecord>,
    pub guidance: Vec<GuidanceRecord>,
    pub total_ms: f64,
}

impl GenerationReport {
    /// `step,time_ms` lines.
    pub fn timing_text(&self) -> String {
        let mut out = String::from("step,time_ms\n");
        for s in &self.steps {
            writeln!(out, "{},{:.6}", s.step, s.time_ms).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Generation<T> {
    pub sample: Tensor<T>,
    pub report: GenerationReport,
}

fn normal_tensor<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z)
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("noise shape")
}

fn check_condition<T: Real, D: Denoiser<T> + ?Sized>(den: &D, cond: &ConditionTensor<T>) -> Result<(), DiffusionError> {
    match den.cond_channels() {
        Some(expected) if expected != cond.channels() => {
            Err(DiffusionError::ConditionChannels { expected, found: cond.channels() })
        }
        _ => Ok(()),
    }
}

fn run<T: Real, D: Denoiser<T> + ?Sized>(
    den: &D,
    cond: &ConditionTensor<T>,
    sched: &NoiseSchedule<T>,
    opts: &GenerateOptions<'_, T>,
    stream: u64,
) -> Result<Generation<T>, DiffusionError> {
    check_condition(den, cond)?;
    let (nx, ny, nz) = cond.spatial();
    let shape = [den.latent_channels(), nx, ny, nz];
    if let Some(g) = opts.guidance {
        if g.mask.shape() != shape {
            return Err(DiffusionError::Shape(crate::tensor::ShapeError::Mismatch {
                left: g.mask.shape().to_vec(),
                right: shape.to_vec(),
            }));
        }
    }
    let schedule = opts.sampler.timesteps(sched.steps())?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let mut x = normal_tensor::<T>(&shape, &mut rng);
    let mut report = GenerationReport::default();

    for (n, &(t, t_prev)) in schedule.iter().enumerate() {
        let step_start = Instant::now();
        let mut eps = den.predict_eps(&x, t, sched, cond)?;
        if eps.shape() != shape {
            return Err(DiffusionError::Shape(crate::tensor::ShapeError::Mismatch {
                left: eps.shape().to_vec(),
                right: shape.to_vec(),
            }));
        }
        let guided = match opts.guidance {
            Some(g) if g.lambda_at(t) > 0.0 => {
                let x0 = predict_x0(&x, t, &eps, sched)?;
                let corrected = guided_correction(&x0, g, t)?;
                report.guidance.push(GuidanceRecord {
                    t,
                    before: masked_discrepancy(&x0, g)?.as_f64(),
                    after: masked_discrepancy(&corrected, g)?.as_f64(),
                });
                Some(corrected)
            }
            _ => None,
        };
        x = match opts.sampler {
            Sampler::Ddpm { variance } => {
                if let Some(x0) = &guided {
                    eps = eps_from_x0(&x, t, x0, sched)?;
                }
                let noise = (t > 1).then(|| normal_tensor::<T>(&shape, &mut rng));
                ddpm_step(&x, t, &eps, noise.as_ref(), sched, variance)?
            }
            Sampler::Ddim { eta, .. } => {
                let eta = T::of(eta);
                let x0 = match guided {
                    Some(x0) => x0,
                    None => predict_x0(&x, t, &eps, sched)?,
                };
                let noise =
                    (ddim_sigma(t, t_prev, eta, sched) > T::zero()).then(|| normal_tensor::<T>(&shape, &mut rng));
                ddim_step_from_x0(&x0, t, t_prev, &eps, eta, noise.as_ref(), sched)?
            }
        };
        report.steps.push(StepRecord {
            step: n + 1,
            t,
            t_prev,
            time_ms: step_start.elapsed().as_secs_f64() * 1e3,
        });
    }
    report.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Generation { sample: x, report })
}

/// Samples `[C_latent, nx, ny, nz]` starting from ChaCha8(`seed`) standard
/// normal noise. Deterministic in `seed` for every sampler.
pub fn generate<T: Real, D: Denoiser<T> + ?Sized>(
    den: &D,
    cond: &ConditionTensor<T>,
    sched: &NoiseSchedule<T>,
    opts: &GenerateOptions<'_, T>,
) -> Result<Generation<T>, DiffusionError> {
    run(den, cond, sched, opts, 0)
}

/// Depth range `z0..z1` of a channel-first `[C, nx, ny, nz]` tensor.
pub fn slice_depth<T: Real>(t: &Tensor<T>, z0: usize, z1: usize) -> Tensor<T> {
    let s = t.shape();
    let (c, nx, ny, nz) = (s[0], s[1], s[2], s[3]);
    let d = z1 - z0;
    let mut out = Vec::with_capacity(c * nx * ny * d);
    for row in t.data().chunks_exact(nz) {
        out.extend_from_slice(&row[z0..z1]);
    }
    Tensor::from_vec(vec![c, nx, ny, d], out).expect("slab shape")
}

/// Concatenates channel-first tensors along depth.
pub fn concat_depth<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>, DiffusionError> {
    let first = parts.first().ok_or_else(|| DiffusionError::Sampler("no slabs".into()))?;
    let s = first.shape();
    let (c, nx, ny) = (s[0], s[1], s[2]);
    for p in parts {
        if p.shape()[..3] != s[..3] {
            return Err(DiffusionError::Shape(crate::tensor::ShapeError::Mismatch {
                left: s.to_vec(),
                right: p.shape().to_vec(),
            }));
        }
    }
    let nz: usize = parts.iter().map(|p| p.shape()[3]).sum();
    let mut out = Vec::with_capacity(c * nx * ny * nz);
    for r in 0..c * nx * ny {
        for p in parts {
            let d = p.shape()[3];
            out.extend_from_slice(&p.data()[r * d..(r + 1) * d]);
        }
    }
    Ok(Tensor::from_vec(vec![c, nx, ny, nz], out).expect("depth concat"))
}

/// `slabs` consecutive depth blocks of `depth` layers each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlabLayout {
    pub slabs: usize,
    pub depth: usize,
}

/// Height-wise generation. Slab `d` is conditioned on the base condition
/// restricted to its layers plus the generated slab `d - 1` (zeros for the
/// first). Each finished slab is handed to `sink` and only the latest one is
/// retained. Slab `d` draws its noise from ChaCha8 stream `d` of `seed`.
pub fn autoregressive_generate_with<T, D, F>(
    den: &D,
    base_cond: &ConditionTensor<T>,
    sched: &NoiseSchedule<T>,
    opts: &GenerateOptions<'_, T>,
    layout: SlabLayout,
    mut sink: F,
) -> Result<Vec<GenerationReport>, DiffusionError>
where
    T: Real,
    D: Denoiser<T> + ?Sized,
    F: FnMut(usize, &Tensor<T>) -> Result<(), DiffusionError>,
{
    let (nx, ny, nz) = base_cond.spatial();
    if layout.slabs == 0 || layout.depth == 0 || layout.slabs * layout.depth != nz {
        return Err(DiffusionError::Sampler(format!(
            "{} slabs of depth {} do not tile {nz} layers",
            layout.slabs, layout.depth
        )));
    }
    let c = den.latent_channels();
    let expected = base_cond.channels() + c;
    if let Some(e) = den.cond_channels() {
        if e != expected {
            return Err(DiffusionError::ConditionChannels { expected: e, found: expected });
        }
    }
    let mut previous = Tensor::zeros(vec![c, nx, ny, layout.depth]);
    let mut reports = Vec::with_capacity(layout.slabs);
    for d in 0..layout.slabs {
        let (z0, z1) = (d * layout.depth, (d + 1) * layout.depth);
        let cond = base_cond.slab(z0, z1).with(&previous)?;
        let guidance = opts.guidance.map(|g| g.slab(z0, z1));
        let slab_opts = GenerateOptions { sampler: opts.sampler, guidance: guidance.as_ref(), seed: opts.seed };
        let g = run(den, &cond, sched, &slab_opts, d as u64)?;
        sink(d, &g.sample)?;
        previous = g.sample;
        reports.push(g.report);
    }
    Ok(reports)
}

/// [`autoregressive_generate_with`] collecting the slabs into one volume.
pub fn autoregressive_generate<T: Real, D: Denoiser<T> + ?Sized>(
    den: &D,
    base_cond: &ConditionTensor<T>,
    sched: &NoiseSchedule<T>,
    opts: &GenerateOptions<'_, T>,
    layout: SlabLayout,
) -> Result<(Tensor<T>, Vec<GenerationReport>), DiffusionError> {
    let mut slabs = Vec::with_capacity(layout.slabs);
    let reports = autoregressive_generate_with(den, base_cond, sched, opts, layout, |_, s| {
        slabs.push(s.clone());
        Ok(())
    })?;
    Ok((concat_depth(&slabs)?, reports))
}
