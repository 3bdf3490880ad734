use super::DiffusionError;
use crate::scalar::{pairwise_sum_by, Real};
use crate::tensor::Tensor;

/// `β_t`, `α_t = 1 - β_t` and `ᾱ_t = ∏_{s≤t} α_s` for `t = 1..=T`, with the
/// convention `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    beta: Vec<T>,
    alpha_bar: Vec<T>,
}

impl<T: Real> NoiseSchedule<T> {
    /// `betas[t - 1] = β_t`. The running product is accumulated in f64.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::Schedule("empty schedule".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(DiffusionError::Schedule(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        let mut acc = 1.0f64;
        alpha_bar.push(T::one());
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(T::of(acc));
        }
        Ok(Self { beta: betas.into_iter().map(T::of).collect(), alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `β_t`, `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> T {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> T {
        T::one() - self.beta[t - 1]
    }

    /// `ᾱ_t`, `0 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> T {
        self.alpha_bar[t]
    }

    pub(crate) fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t > self.steps() {
            return Err(DiffusionError::Timestep { t, steps: self.steps() });
        }
        Ok(())
    }

    fn check_positive(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 {
            return Err(DiffusionError::Timestep { t, steps: self.steps() });
        }
        self.check(t)
    }
}

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// `β_t` linear from `beta_start` (t = 1) to `beta_end` (t = T) inclusive.
pub fn linear_schedule<T: Real>(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule<T>, DiffusionError> {
    if steps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::Schedule(format!(
            "need T >= 1 and 0 < beta_start <= beta_end < 1, got T={steps}, {beta_start}..{beta_end}"
        )));
    }
    let betas = (0..steps)
        .map(|n| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * n as f64 / (steps - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

impl<T: Real> Default for NoiseSchedule<T> {
    fn default() -> Self {
        linear_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule")
    }
}

fn combine<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, DiffusionError> {
    Ok(a.zip_with(b, f)?)
}

/// `√ᾱ_t · x0 + √(1 - ᾱ_t) · eps`, `0 ≤ t ≤ T`.
pub fn forward_sample<T: Real>(
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    sched: &NoiseSchedule<T>,
) -> Result<Tensor<T>, DiffusionError> {
    sched.check(t)?;
    let ab = sched.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (T::one() - ab).sqrt());
    combine(x0, eps, |x, e| s * x + n * e)
}

/// `(x_t - √(1 - ᾱ_t) · eps_hat) / √ᾱ_t`.
pub fn predict_x0<T: Real>(
    x_t: &Tensor<T>,
    t: usize,
    eps_hat: &Tensor<T>,
    sched: &NoiseSchedule<T>,
) -> Result<Tensor<T>, DiffusionError> {
    sched.check(t)?;
    let ab = sched.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (T::one() - ab).sqrt());
    combine(x_t, eps_hat, |x, e| (x - n * e) / s)
}

/// Inverse of [`predict_x0`]: the noise estimate implied by an `x0` estimate.
pub fn eps_from_x0<T: Real>(
    x_t: &Tensor<T>,
    t: usize,
    x0: &Tensor<T>,
    sched: &NoiseSchedule<T>,
) -> Result<Tensor<T>, DiffusionError> {
    sched.check_positive(t)?;
    let ab = sched.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (T::one() - ab).sqrt());
    combine(x_t, x0, |x, x0| (x - s * x0) / n)
}

/// Noise scale of the ancestral step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DdpmVariance {
    /// `σ_t² = β_t`.
    #[default]
    Beta,
    /// `σ_t² = β_t · (1 - ᾱ_{t-1}) / (1 - ᾱ_t)`.
    Posterior,
}

impl DdpmVariance {
    pub fn sigma<T: Real>(self, t: usize, sched: &NoiseSchedule<T>) -> T {
        let beta = sched.beta(t);
        match self {
            DdpmVariance::Beta => beta.sqrt(),
            DdpmVariance::Posterior => {
                (beta * (T::one() - sched.alpha_bar(t - 1)) / (T::one() - sched.alpha_bar(t))).sqrt()
            }
        }
    }
}

/// Ancestral step `x_t → x_{t-1}`:
/// `(x_t - β_t / √(1 - ᾱ_t) · eps_hat) / √α_t + σ_t · noise`.
/// `noise = None` means a zero draw.
pub fn ddpm_step<T: Real>(
    x_t: &Tensor<T>,
    t: usize,
    eps_hat: &Tensor<T>,
    noise: Option<&Tensor<T>>,
    sched: &NoiseSchedule<T>,
    variance: DdpmVariance,
) -> Result<Tensor<T>, DiffusionError> {
    sched.check_positive(t)?;
    let coef = sched.beta(t) / (T::one() - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = T::one() / sched.alpha(t).sqrt();
    let mean = combine(x_t, eps_hat, |x, e| (x - coef * e) * inv_sqrt_alpha)?;
    match noise {
        None => Ok(mean),
        Some(z) => {
            let sigma = variance.sigma(t, sched);
            combine(&mean, z, |m, z| m + sigma * z)
        }
    }
}

/// `σ = η · √((1 - ᾱ_prev) / (1 - ᾱ_t)) · √(1 - ᾱ_t / ᾱ_prev)`.
pub fn ddim_sigma<T: Real>(t: usize, t_prev: usize, eta: T, sched: &NoiseSchedule<T>) -> T {
    let (ab, abp) = (sched.alpha_bar(t), sched.alpha_bar(t_prev));
    let one = T::one();
    eta * ((one - abp) / (one - ab)).sqrt() * (one - ab / abp).max(T::zero()).sqrt()
}

/// Generalised step `x_t → x_{t_prev}`:
/// `√ᾱ_prev · x̂0 + √(1 - ᾱ_prev - σ²) · eps_hat + σ · noise`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step<T: Real>(
    x_t: &Tensor<T>,
    t: usize,
    t_prev: usize,
    eps_hat: &Tensor<T>,
    eta: T,
    noise: Option<&Tensor<T>>,
    sched: &NoiseSchedule<T>,
) -> Result<Tensor<T>, DiffusionError> {
    let x0 = predict_x0(x_t, t, eps_hat, sched)?;
    ddim_step_from_x0(&x0, t, t_prev, eps_hat, eta, noise, sched)
}

/// [`ddim_step`] with an explicit (possibly corrected) `x̂0`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step_from_x0<T: Real>(
    x0: &Tensor<T>,
    t: usize,
    t_prev: usize,
    eps_hat: &Tensor<T>,
    eta: T,
    noise: Option<&Tensor<T>>,
    sched: &NoiseSchedule<T>,
) -> Result<Tensor<T>, DiffusionError> {
    sched.check_positive(t)?;
    if t_prev >= t {
        return Err(DiffusionError::StepPair { t, t_prev });
    }
    if !(eta >= T::zero() && eta <= T::one()) {
        return Err(DiffusionError::Eta(eta.as_f64()));
    }
    let abp = sched.alpha_bar(t_prev);
    let sigma = ddim_sigma(t, t_prev, eta, sched);
    let dir = (T::one() - abp - sigma * sigma).max(T::zero()).sqrt();
    let s = abp.sqrt();
    let mut out = combine(x0, eps_hat, |x, e| s * x + dir * e)?;
    if let Some(z) = noise {
        if sigma > T::zero() {
            out = combine(&out, z, |o, z| o + sigma * z)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    L1,
    #[default]
    L2,
}

/// Mean absolute (L1) or squared (L2) difference, pairwise-summed.
pub fn simple_loss<T: Real>(eps_hat: &Tensor<T>, eps: &Tensor<T>, kind: LossKind) -> Result<T, DiffusionError> {
    eps_hat.ensure_same_shape(eps)?;
    let (a, b) = (eps_hat.data(), eps.data());
    if a.is_empty() {
        return Ok(T::zero());
    }
    let sum = match kind {
        LossKind::L1 => pairwise_sum_by(0, a.len(), |i| (a[i] - b[i]).abs()),
        LossKind::L2 => pairwise_sum_by(0, a.len(), |i| (a[i] - b[i]) * (a[i] - b[i])),
    };
    Ok(sum / T::of(a.len() as f64))
}
