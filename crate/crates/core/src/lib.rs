//! Numerical laboratory for multiradial Loewner evolution.
//!
//! The crate is generic over the scalar type through [`Real`]; the aliases at
//! the bottom of this file fix the common `f64` instantiations.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::{Deserialize, Serialize};

pub mod battery;
pub mod config;
pub mod drivers;
pub mod energy;
pub mod error;
pub mod escape;
pub mod geometry;
pub mod loewner;
pub mod loopmeasure;
pub mod par;
pub mod rng;
pub mod stats;
pub mod tilting;

pub use error::{Error, Result};

/// Floating point scalar accepted by every numerical routine.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Literal conversion. Panics only if `T` cannot represent a finite `f64`,
/// which never happens for `f32`/`f64`.
#[inline(always)]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("scalar conversion")
}

#[inline(always)]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar conversion")
}

/// A real value that may be an explicit infinity.
///
/// Infinite results are tagged instead of being stored as IEEE infinities so
/// that serialized output never contains `inf` or `NaN`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Extended<T> {
    Finite(T),
    PosInf,
    NegInf,
}

impl<T: Real> Extended<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            Extended::Finite(x) => Some(x),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    /// Maps to the IEEE value, for arithmetic that tolerates infinities.
    pub fn to_float(self) -> T {
        match self {
            Extended::Finite(x) => x,
            Extended::PosInf => T::infinity(),
            Extended::NegInf => T::neg_infinity(),
        }
    }

    pub fn map<U: Real>(self, f: impl FnOnce(T) -> U) -> Extended<U> {
        match self {
            Extended::Finite(x) => Extended::Finite(f(x)),
            Extended::PosInf => Extended::PosInf,
            Extended::NegInf => Extended::NegInf,
        }
    }
}

pub type TorusConfig64 = config::TorusConfig<f64>;
pub type DriverPath64 = loewner::DriverPath<f64>;
pub type BoundaryFlow64 = loewner::BoundaryFlow<f64>;
pub type MultiradialCurve64 = loewner::MultiradialCurve<f64>;
pub type TimeChange64 = loewner::TimeChange<f64>;
pub type SleConstants64 = energy::SleConstants<f64>;
pub type TorusConfig32 = config::TorusConfig<f32>;
pub type DriverPath32 = loewner::DriverPath<f32>;
