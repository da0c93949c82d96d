//! Scalar abstractions.
//!
//! [`Scalar`] is the floating-point bound used by the model and solver.
//! [`CostValue`] is the looser bound used by the stopping rules, which only
//! need ordered field arithmetic and therefore also accept exact rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, NumAssign, Signed, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + CostValue + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant; every constant used by the crate is representable.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal fits scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Ordered values a cost trace can be expressed in.
pub trait CostValue: num_traits::Num + Signed + Copy + PartialOrd + Debug {
    /// Slack allowed when comparing quantities of the given magnitude.
    fn slack(magnitude: Self) -> Self;

    fn from_ratio(num: i64, den: i64) -> Self;
}

impl CostValue for f64 {
    fn slack(magnitude: Self) -> Self {
        magnitude.abs() * 1e-12
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
}

impl CostValue for f32 {
    fn slack(magnitude: Self) -> Self {
        magnitude.abs() * 1e-5
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        num as f32 / den as f32
    }
}

impl CostValue for Ratio<i64> {
    fn slack(_magnitude: Self) -> Self {
        Ratio::from_integer(0)
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        Ratio::new(num, den)
    }
}
