//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating-point scalar used throughout the crate (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Relative tolerance appropriate for orthonormality checks at this precision.
    #[inline]
    fn ortho_tol() -> Self {
        Self::lit(1e-9).max(Self::epsilon() * Self::lit(1e3))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wraps an angle into the canonical range (−π, π].
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::TAU();
    let mut w = a - two_pi * ((a + T::PI()) / two_pi).floor();
    // floor maps onto [−π, π); move the lower endpoint up
    if w <= -T::PI() {
        w += two_pi;
    }
    if w > T::PI() {
        w -= two_pi;
    }
    w
}

/// Numerically stable `log(Σ exp(x_i))`.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}
