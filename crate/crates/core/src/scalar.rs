//! Scalar abstraction. The numeric core is generic over the float width so the
//! same kernels run in f64 (shipped default, required by the tight
//! finite-difference oracles) or f32. Conversions to/from f64 are explicit and
//! only appear at configuration and persistence boundaries.

use rand::Rng;
use rand_distr::StandardNormal;

pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + core::ops::AddAssign
    + core::ops::SubAssign
    + core::ops::MulAssign
    + core::iter::Sum
    + core::fmt::Debug
    + core::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Lossy in general (f32); exact for f64.
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    /// One N(0,1) draw. Implemented per type so the distribution matches the
    /// scalar width instead of sampling wide and rounding.
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f64 {
    #[inline(always)]
    fn of(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Real for f32 {
    #[inline(always)]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}
