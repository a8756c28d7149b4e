//! Scalar abstraction: the numeric core is generic over `f32`/`f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar for tensors, tapes and models.
///
/// Randomness is always drawn as `f64` and converted, so runs with the same
/// seed visit the same random sequence regardless of the scalar type.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Tag recorded in checkpoints so a file is never loaded at the wrong width.
    const DTYPE: &'static str;

    fn of_f64(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
    /// Raw bit pattern widened to `u64`; used when digesting parameters.
    fn bits_u64(self) -> u64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossy(self) -> f64 {
        f64::from(self)
    }
    fn bits_u64(self) -> u64 {
        u64::from(self.to_bits())
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn of_f64(v: f64) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
    fn bits_u64(self) -> u64 {
        self.to_bits()
    }
}
