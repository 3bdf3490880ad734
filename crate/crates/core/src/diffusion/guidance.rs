use super::DiffusionError;
use crate::scalar::{pairwise_sum_by, Real};
use crate::tensor::Tensor;

/// Per-timestep weights `λ_t` (index `t = 0..=T`), a 0/1 observation mask and
/// the dense target `S_interp`, all on the latent's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig<T> {
    pub lambda: Vec<f64>,
    pub mask: Tensor<T>,
    pub target: Tensor<T>,
}

impl<T: Real> GuidanceConfig<T> {
    pub fn new(lambda: Vec<f64>, mask: Tensor<T>, target: Tensor<T>) -> Result<Self, DiffusionError> {
        mask.ensure_same_shape(&target)?;
        if let Some(l) = lambda.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(DiffusionError::Sampler(format!("guidance weight {l} is negative or not finite")));
        }
        Ok(Self { lambda, mask, target })
    }

    /// `λ_t = value` for `1 ≤ t ≤ floor(fraction · T)`, else 0.
    pub fn last_fraction(steps: usize, value: f64, fraction: f64) -> Vec<f64> {
        let cut = crate::scalar::floor_fraction(fraction, steps);
        (0..=steps).map(|t| if t >= 1 && t <= cut { value } else { 0.0 }).collect()
    }

    /// Default weights: 0.1 over the final quarter of the schedule.
    pub fn default_lambda(steps: usize) -> Vec<f64> {
        Self::last_fraction(steps, 0.1, 0.25)
    }

    pub fn lambda_at(&self, t: usize) -> f64 {
        self.lambda.get(t).copied().unwrap_or(0.0)
    }

    /// Restriction to depth range `z0..z1` of channel-first tensors.
    pub fn slab(&self, z0: usize, z1: usize) -> Self {
        Self {
            lambda: self.lambda.clone(),
            mask: super::slice_depth(&self.mask, z0, z1),
            target: super::slice_depth(&self.target, z0, z1),
        }
    }
}

/// `x̂0 - 2 λ_t · mask ⊙ (x̂0 - S_interp)`: one gradient step on
/// `λ_t ‖mask ⊙ (x̂0 - S_interp)‖²`, evaluated as the blend
/// `(1 - w) x̂0 + w S_interp` with `w = 2 λ_t mask`.
pub fn guided_correction<T: Real>(
    x0: &Tensor<T>,
    guid: &GuidanceConfig<T>,
    t: usize,
) -> Result<Tensor<T>, DiffusionError> {
    x0.ensure_same_shape(&guid.mask)?;
    let step = T::of(2.0 * guid.lambda_at(t));
    let mut out = x0.clone();
    for ((o, &m), &s) in out.data_mut().iter_mut().zip(guid.mask.data()).zip(guid.target.data()) {
        let w = step * m;
        *o = (T::one() - w) * *o + w * s;
    }
    Ok(out)
}

/// `‖mask ⊙ (x - S_interp)‖²`.
pub fn masked_discrepancy<T: Real>(x: &Tensor<T>, guid: &GuidanceConfig<T>) -> Result<T, DiffusionError> {
    x.ensure_same_shape(&guid.mask)?;
    let (x, m, s) = (x.data(), guid.mask.data(), guid.target.data());
    Ok(pairwise_sum_by(0, x.len(), |i| {
        let d = m[i] * (x[i] - s[i]);
        d * d
    }))
}
