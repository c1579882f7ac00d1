//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::FromPrimitive;

/// Floating-point scalar the pipeline can run in.
///
/// Cache files always carry 64-bit values; everything downstream of row
/// bucketing is generic so the same code runs in `f32` or `f64`.
pub trait Float:
    num_traits::Float + FromPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` constant. Panics only for values that cannot be
    /// represented at all, which never happens for the constants used here.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Widens to `f64` for serialization.
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Largest representable value strictly below one.
    #[inline]
    fn one_below() -> Self {
        Self::one() - Self::epsilon() / Self::lit(2.0)
    }
}

impl Float for f32 {}
impl Float for f64 {}
