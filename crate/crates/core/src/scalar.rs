//! The floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
///
/// The simulator runs in `f64` by default; `f32` is supported for every
/// tensor, model and optimizer routine.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and RNG draws.
    fn of(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("f64 is representable in every Scalar")
    }

    fn of_usize(value: usize) -> Self {
        Self::of(value as f64)
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
