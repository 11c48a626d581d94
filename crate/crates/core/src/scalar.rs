//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the renderer, quantizer and optimizer are generic over.
///
/// Scenes are stored in `f32` (checkpoint precision); `f64` is used by the
/// gradient checks and anywhere a high-precision reference is needed.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`. Total for both implementors.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("finite cast to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn cast<A: Real, B: Real>(v: A) -> B {
    B::of(v.as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn casts_round_trip_f32_exactly() {
        for v in [0.0f32, -1.5, 3.0e-38, f32::MAX, 0.1] {
            let wide: f64 = cast(v);
            let back: f32 = cast(wide);
            assert_eq!(v.to_bits(), back.to_bits());
        }
    }
}
