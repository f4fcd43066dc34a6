//! Scalar abstraction the kernel suite is written against.
//!
//! Every kernel is generic over [`Real`], so the same source runs as plain
//! `f64` arithmetic, on an AD tape ([`crate::adtape::Active`]), or under the
//! read-tracking probe used by the analyzer's oracle.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A value that carries no dependence on any input.
    fn constant(c: f64) -> Self;

    /// Primal value.
    fn value(self) -> f64;

    fn sqrt(self) -> Self;

    /// Larger of the two; ties resolve to `self`.
    fn max(self, other: Self) -> Self;

    fn abs(self) -> Self {
        self.max(-self)
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    #[inline]
    fn constant(c: f64) -> Self {
        c
    }

    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    #[inline]
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

/// Sum of a sequence, pairwise, so rounding stays logarithmic in length.
pub fn pairwise_sum<T: Real>(terms: &[T]) -> T {
    match terms.len() {
        0 => T::constant(0.0),
        1 => terms[0],
        2 => terms[0] + terms[1],
        n => {
            let (lo, hi) = terms.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_max_prefers_first_on_tie() {
        assert_eq!(Real::max(2.0_f64, 2.0).to_bits(), 2.0_f64.to_bits());
        assert_eq!(Real::max(3.0_f64, 2.0), 3.0);
        assert_eq!(Real::max(2.0_f64, 3.0), 3.0);
    }

    #[test]
    fn pairwise_sum_matches_small_cases() {
        assert_eq!(pairwise_sum::<f64>(&[]), 0.0);
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0, 4.0, 5.0]), 15.0);
    }
}
