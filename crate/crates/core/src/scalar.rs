//! Scalar abstraction for the numeric stack.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use rand::distributions::uniform::SampleUniform;

/// Floating-point scalar usable by tensors, layers, and optimizers.
///
/// Implemented for `f32` (training) and `f64` (gradient checking).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + SampleUniform
    + Sum<Self>
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; panics only if the value is not
    /// representable at all (never for finite inputs on f32/f64).
    fn from_f64_lossy(x: f64) -> Self {
        Self::from(x).expect("finite f64 converts to scalar")
    }

    /// Widen to `f64` for reporting and metrics.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
