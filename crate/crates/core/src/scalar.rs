//! Floating point scalar abstraction shared by the forest, statistics and
//! pipeline modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the detector is computed in: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Name written into detector files so a model is reloaded at the
    /// precision it was fitted with.
    const NAME: &'static str;

    /// Lossy conversion from `f64`; literals and uniform draws go through this.
    fn of(v: f64) -> Self;

    /// Exact widening of a stored 32-bit feature.
    fn of_f32(v: f32) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn of_f32(v: f32) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn of_f32(v: f32) -> Self {
        v as f64
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
