//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; always succeeds for finite inputs.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Pairwise (cascade) summation. Fixed recursion order, so results do not
/// depend on thread count or chunking.
pub fn pairwise_sum<T: Real>(values: &[T]) -> T {
    const LEAF: usize = 64;
    if values.len() <= LEAF {
        let mut acc = T::zero();
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f(i)` for `i in 0..n`, without materialising the terms.
pub fn pairwise_sum_by<T: Real, F: Fn(usize) -> T + Copy>(start: usize, end: usize, f: F) -> T {
    const LEAF: usize = 64;
    if end - start <= LEAF {
        let mut acc = T::zero();
        for i in start..end {
            acc += f(i);
        }
        return acc;
    }
    let mid = start + (end - start) / 2;
    pairwise_sum_by(start, mid, f) + pairwise_sum_by(mid, end, f)
}

/// `floor(fraction * n)` guarded against representation error in the product
/// (e.g. `0.29 * 100 = 28.999999999999996`).
pub fn floor_fraction(fraction: f64, n: usize) -> usize {
    let p = fraction * n as f64;
    (p + 1e-9 * p.abs().max(1.0)).floor().max(0.0) as usize
}
