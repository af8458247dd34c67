//! Scalar abstraction for the metric and policy arithmetic.
//!
//! Virtual time is always integer milliseconds. Everything derived from it
//! (window averages, slowdowns, ratios) is computed in a generic floating
//! point type so the same code runs in `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar used by the metric and policy math.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or measurement.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    /// Lossy conversion from an integer count or millisecond value.
    fn of_u64(v: u64) -> Self {
        Self::from_u64(v).expect("u64 is representable in every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `ceil` that ignores a few ulps of representation error above an
    /// integer, so `3.5 / 0.7` yields 5 rather than 6.
    fn robust_ceil(self) -> Self {
        let slack = Self::epsilon() * Self::of(16.0) * self.abs().max(Self::one());
        (self - slack).ceil()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
