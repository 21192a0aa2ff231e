//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// floating point: f32 or f64
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Significant decimal digits written by the text serializers.
    const SERIAL_DIGITS: usize;

    /// Converts an `f64` literal into this scalar type.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("count representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {
    const SERIAL_DIGITS: usize = 17;
}

impl Scalar for f64 {
    const SERIAL_DIGITS: usize = 17;
}

/// Formats a value with [`Scalar::SERIAL_DIGITS`] significant digits.
pub fn format_scalar<T: Scalar>(v: T) -> String {
    format!("{:.*e}", T::SERIAL_DIGITS - 1, v)
}

/// Parses a scalar from trimmed text, returning `None` on malformed input.
pub fn parse_scalar<T: Scalar>(s: &str) -> Option<T> {
    s.trim().parse::<T>().ok()
}

/// `log(Σ exp(v))` with max subtraction.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
