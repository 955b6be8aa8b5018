use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar used by the geometry, rendering and detection code.
///
/// Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Tolerance used when validating rotations read from noisy inputs.
    fn rotation_tolerance() -> Self;
}

impl Real for f32 {
    fn rotation_tolerance() -> Self {
        1e-4
    }
}

impl Real for f64 {
    fn rotation_tolerance() -> Self {
        1e-6
    }
}
