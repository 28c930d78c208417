use std::fmt::Debug;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use rustfft::FftNum;

/// Floating-point element type for the compute graph. Training normally runs
/// in f32; gradient checks use f64.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + LinalgScalar + ScalarOperand + FftNum + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Shorthand constant conversion.
#[inline]
pub fn sc<S: Scalar>(v: f64) -> S {
    <S as Scalar>::from_f64(v)
}
