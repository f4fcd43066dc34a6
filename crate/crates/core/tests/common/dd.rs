//! Double-double arithmetic (about 106 bits of mantissa), used to evaluate
//! kernels precisely enough that central differences over large sums are
//! not swamped by rounding.

use std::ops::{Add, Div, Mul, Neg, Sub};

use scrutinize_core::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const fn new(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    fn norm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        DoubleDouble { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        DoubleDouble::norm(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        DoubleDouble::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b * DoubleDouble::new(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * DoubleDouble::new(q2);
        let q3 = r.hi / b.hi;
        DoubleDouble::norm(q1, q2) + DoubleDouble::new(q3)
    }
}

macro_rules! with_f64 {
    ($trait:ident, $method:ident) => {
        impl $trait<f64> for DoubleDouble {
            type Output = Self;
            fn $method(self, b: f64) -> Self {
                $trait::$method(self, DoubleDouble::new(b))
            }
        }
    };
}

with_f64!(Add, add);
with_f64!(Sub, sub);
with_f64!(Mul, mul);
with_f64!(Div, div);

impl Real for DoubleDouble {
    fn constant(c: f64) -> Self {
        DoubleDouble::new(c)
    }

    fn value(self) -> f64 {
        self.to_f64()
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return DoubleDouble::new(self.hi.sqrt());
        }
        let y = DoubleDouble::new(self.hi.sqrt());
        // one Newton step doubles the number of correct bits
        y + (self - y * y) / (y * 2.0)
    }

    fn max(self, other: Self) -> Self {
        if (other.hi, other.lo) > (self.hi, self.lo) {
            other
        } else {
            self
        }
    }
}
