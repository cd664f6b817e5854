//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! The engine is written once against [`Scalar`] and instantiated for `f64`
//! (the default used by the harness and all tolerance-sensitive paths) and
//! `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the network, optimizers and metrics are generic over.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn cast(v: f64) -> Self;

    fn to_f64_lossless(self) -> f64;

    /// Converts a count (batch size, layer width, ...) to the scalar type.
    fn from_count(n: usize) -> Self {
        Self::cast(n as f64)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cast(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn cast(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
}

/// Neumaier-compensated running sum. Terms are consumed strictly in the order
/// given, so the result is reproducible bit for bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum<S> {
    sum: S,
    carry: S,
}

impl<S: Scalar> CompensatedSum<S> {
    pub fn new() -> Self {
        Self { sum: S::zero(), carry: S::zero() }
    }

    #[inline]
    pub fn add(&mut self, v: S) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> S {
        self.sum + self.carry
    }
}

/// Compensated sum of a sequence, left to right.
pub fn compensated_sum<S: Scalar>(values: impl IntoIterator<Item = S>) -> S {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.total()
}
