use super::{DiffusionError, NoiseSchedule};
use crate::scalar::Real;
use crate::scene::ConditionMaps;
use crate::tensor::Tensor;

/// Stacked per-voxel condition channels `[C_cond, nx, ny, nz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTensor<T> {
    data: Tensor<T>,
}

impl<T: Real> ConditionTensor<T> {
    /// No channels, only the spatial extent.
    pub fn empty(nx: usize, ny: usize, nz: usize) -> Self {
        Self { data: Tensor::zeros(vec![0, nx, ny, nz]) }
    }

    pub fn from_tensor(data: Tensor<T>) -> Result<Self, DiffusionError> {
        if data.rank() != 4 {
            return Err(DiffusionError::Sampler(format!("condition rank {} != 4", data.rank())));
        }
        Ok(Self { data })
    }

    /// Segmentation, height and transmitter maps repeated along `z`.
    pub fn from_maps(maps: &ConditionMaps<T>, nz: usize) -> Self {
        let s = maps.segmentation.shape();
        let (nx, ny) = (s[0], s[1]);
        let mut data = Vec::with_capacity(3 * nx * ny * nz);
        for m in [&maps.segmentation, &maps.height, &maps.transmitter] {
            for &v in m.data() {
                data.extend(std::iter::repeat_n(v, nz));
            }
        }
        Self { data: Tensor::from_vec(vec![3, nx, ny, nz], data).expect("condition shape") }
    }

    /// Appends channel-first `[c, nx, ny, nz]` channels.
    pub fn push(&mut self, extra: &Tensor<T>) -> Result<(), DiffusionError> {
        self.data = Tensor::concat_channels(&[&self.data, extra])?;
        Ok(())
    }

    pub fn with(mut self, extra: &Tensor<T>) -> Result<Self, DiffusionError> {
        self.push(extra)?;
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn spatial(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[1], s[2], s[3])
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn slab(&self, z0: usize, z1: usize) -> Self {
        Self { data: super::slice_depth(&self.data, z0, z1) }
    }
}

/// Noise predictor `ε̂(x_t, t, cond)`.
pub trait Denoiser<T: Real>: Send + Sync {
    fn latent_channels(&self) -> usize;

    /// Required condition channel count, or `None` if any is accepted.
    fn cond_channels(&self) -> Option<usize>;

    fn predict_eps(
        &self,
        x_t: &Tensor<T>,
        t: usize,
        sched: &NoiseSchedule<T>,
        cond: &ConditionTensor<T>,
    ) -> Result<Tensor<T>, DiffusionError>;
}

/// Closed-form noise predictor for data distributed as independent
/// `N(μ0, σ0²)` per element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticGaussian<T> {
    pub mu0: T,
    pub sigma0: T,
    pub channels: usize,
}

impl<T: Real> AnalyticGaussian<T> {
    pub fn new(mu0: T, sigma0: T, channels: usize) -> Result<Self, DiffusionError> {
        if !(sigma0 >= T::zero()) {
            return Err(DiffusionError::Sampler(format!("sigma0 {sigma0} < 0")));
        }
        Ok(Self { mu0, sigma0, channels })
    }

    /// `E[x0 | x_t] = (√ᾱ σ0² x_t + (1 - ᾱ) μ0) / (ᾱ σ0² + 1 - ᾱ)`.
    pub fn posterior_mean(&self, x_t: T, alpha_bar: T) -> T {
        let v = self.sigma0 * self.sigma0;
        let one = T::one();
        (alpha_bar.sqrt() * v * x_t + (one - alpha_bar) * self.mu0) / (alpha_bar * v + one - alpha_bar)
    }
}

impl<T: Real> Denoiser<T> for AnalyticGaussian<T> {
    fn latent_channels(&self) -> usize {
        self.channels
    }

    fn cond_channels(&self) -> Option<usize> {
        None
    }

    fn predict_eps(
        &self,
        x_t: &Tensor<T>,
        t: usize,
        sched: &NoiseSchedule<T>,
        _cond: &ConditionTensor<T>,
    ) -> Result<Tensor<T>, DiffusionError> {
        sched.check(t)?;
        if t == 0 {
            return Err(DiffusionError::Timestep { t, steps: sched.steps() });
        }
        let ab = sched.alpha_bar(t);
        let (s, n) = (ab.sqrt(), (T::one() - ab).sqrt());
        Ok(x_t.map(|x| (x - s * self.posterior_mean(x, ab)) / n))
    }
}

/// Adapter turning a closure into a [`Denoiser`].
pub struct FnDenoiser<F> {
    pub latent: usize,
    pub cond: Option<usize>,
    pub f: F,
}

impl<T, F> Denoiser<T> for FnDenoiser<F>
where
    T: Real,
    F: Fn(&Tensor<T>, usize, &NoiseSchedule<T>, &ConditionTensor<T>) -> Result<Tensor<T>, DiffusionError>
        + Send
        + Sync,
{
    fn latent_channels(&self) -> usize {
        self.latent
    }

    fn cond_channels(&self) -> Option<usize> {
        self.cond
    }

    fn predict_eps(
        &self,
        x_t: &Tensor<T>,
        t: usize,
        sched: &NoiseSchedule<T>,
        cond: &ConditionTensor<T>,
    ) -> Result<Tensor<T>, DiffusionError> {
        (self.f)(x_t, t, sched, cond)
    }
}
