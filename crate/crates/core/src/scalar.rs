//! Floating-point abstraction. Optimization runs in `f32`; gradient checks
//! and numeric oracles run in `f64`. Everything numeric is generic over
//! [`Scalar`] so both precisions share one implementation.

use num_traits::Float;
use rustfft::FftNum;

pub trait Scalar:
    Float + FftNum + std::fmt::Debug + std::fmt::Display + std::iter::Sum + Send + Sync + 'static
{
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline(always)]
    fn of_f64(x: f64) -> f32 {
        x as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn of_f64(x: f64) -> f64 {
        x
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Compensated (Kahan) summation. Used wherever a long sum must stay
/// accurate to a handful of ulps even in `f32`, e.g. the softmax normalizer
/// behind the kernel simplex guarantee.
pub fn kahan_sum<T: Scalar>(xs: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in xs {
        let y = x - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}
