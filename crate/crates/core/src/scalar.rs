//! Floating-point abstraction for the estimation stack.
//!
//! All numeric code in this crate is generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. The concrete aliases at the crate root
//! fix `f64`, which is what the CLI and the simulation lab use.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{de::DeserializeOwned, Serialize};
use std::fmt::Display;
use std::iter::Sum;

/// Real scalar type usable for model fitting and inference.
///
/// `RealField` supplies the elementary functions and the dense linear
/// algebra; the remaining bounds cover conversions, aggregation, and
/// (de)serialization of fitted objects.
pub trait Scalar:
    RealField
    + Copy
    + Default
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Display
    + Serialize
    + DeserializeOwned
{
    /// Cast an `f64` constant into this scalar type.
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in Scalar")
    }

    /// Widen to `f64` for reporting and special-function evaluation.
    fn to64(self) -> f64 {
        self.to_f64().expect("Scalar convertible to f64")
    }

    /// Draw a standard normal variate.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample::<f64, _>(StandardNormal)
    }
}

impl Scalar for f32 {
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample::<f32, _>(StandardNormal)
    }
}

/// Standard-normal distribution helper usable from generic code.
pub fn normal_draws<F: Scalar, R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<F> {
    (0..count).map(|_| F::std_normal(rng)).collect()
}
