//! Exact non-negative rationals for utilization arithmetic.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Div, Mul};

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

/// A non-negative rational in lowest terms.
///
/// Backed by arbitrary-precision integers so that sums over many periods
/// never overflow; the denominator of a sum is the lcm of its terms.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(Ratio<BigUint>);

impl Rational {
    /// Panics if `denominator` is zero.
    pub fn new(numerator: u64, denominator: u64) -> Self {
        assert!(denominator != 0, "rational with zero denominator");
        Rational(Ratio::new(
            BigUint::from(numerator),
            BigUint::from(denominator),
        ))
    }

    pub fn zero() -> Self {
        Rational::from_integer(0)
    }

    pub fn one() -> Self {
        Rational::from_integer(1)
    }

    pub fn from_integer(value: u64) -> Self {
        Rational(Ratio::from_integer(BigUint::from(value)))
    }

    pub fn numer(&self) -> &BigUint {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigUint {
        self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// `self - other`, clamped at zero.
    pub fn saturating_sub(&self, other: &Rational) -> Rational {
        if other >= self {
            Rational::zero()
        } else {
            Rational(&self.0 - &other.0)
        }
    }

    /// `floor(self * n)`, saturating at `u64::MAX`.
    pub fn floor_scale(&self, n: u64) -> u64 {
        let scaled = self.numer() * BigUint::from(n) / self.denom();
        scaled.to_u64().unwrap_or(u64::MAX)
    }

    /// `ceil(self * n)`, saturating at `u64::MAX`.
    pub fn ceil_scale(&self, n: u64) -> u64 {
        let num = self.numer() * BigUint::from(n);
        let den = self.denom();
        let q = (&num + den - BigUint::from(1u8)) / den;
        q.to_u64().unwrap_or(u64::MAX)
    }

    /// `floor(self)`, saturating at `u64::MAX`.
    pub fn floor(&self) -> u64 {
        self.floor_scale(1)
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == &BigUint::from(1u8) {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl Add for Rational {
    type Output = Rational;
    fn add(self, rhs: Rational) -> Rational {
        Rational(self.0 + rhs.0)
    }
}

impl<'a> Add<&'a Rational> for &'a Rational {
    type Output = Rational;
    fn add(self, rhs: &'a Rational) -> Rational {
        Rational(&self.0 + &rhs.0)
    }
}

impl Mul for Rational {
    type Output = Rational;
    fn mul(self, rhs: Rational) -> Rational {
        Rational(self.0 * rhs.0)
    }
}

impl<'a> Mul<&'a Rational> for &'a Rational {
    type Output = Rational;
    fn mul(self, rhs: &'a Rational) -> Rational {
        Rational(&self.0 * &rhs.0)
    }
}

impl<'a> Div<&'a Rational> for &'a Rational {
    type Output = Rational;
    /// Panics on a zero divisor.
    fn div(self, rhs: &'a Rational) -> Rational {
        assert!(!rhs.is_zero(), "division by zero rational");
        Rational(&self.0 / &rhs.0)
    }
}

impl Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |acc, r| acc + r)
    }
}

impl<'a> Sum<&'a Rational> for Rational {
    fn sum<I: Iterator<Item = &'a Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |acc, r| &acc + r)
    }
}
