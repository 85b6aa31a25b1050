//! Floating-point abstraction shared by every numerical routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, ToPrimitive};

/// Scalar type the solver runs on: `f64` for production runs, `f32` for
/// quick low-precision experiments.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    /// Converts an `f64` constant, panicking only for non-representable values.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// `max(x, k * epsilon)`: clamps a requested tolerance to something the
    /// scalar type can actually resolve.
    #[inline]
    fn tolerance(requested: f64, eps_multiple: f64) -> Self {
        Self::lit(requested).max(Self::epsilon() * Self::lit(eps_multiple))
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Natural-log units to bits.
#[inline]
pub fn nats_to_bits<T: Real>(x: T) -> T {
    x / T::LN_2()
}

/// Bits to natural-log units.
#[inline]
pub fn bits_to_nats<T: Real>(x: T) -> T {
    x * T::LN_2()
}
