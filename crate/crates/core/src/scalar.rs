//! The floating-point element type shared by every tensor in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Real scalar usable for rates, weights and gradients.
///
/// Implemented for `f32` (training and checkpoints) and `f64` (gradient checks).
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant; every finite `f64` is representable (possibly rounded).
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 is castable to every Scalar")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar is castable to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
