//! Numeric scalar abstraction for the closed-form probability code.
//!
//! `f64` is the everyday choice, `f32` is there for cheap sweeps, and
//! [`BigRational`] gives exact, platform-independent answers.

use std::fmt::Debug;

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};

pub trait Scalar: Num + Clone + PartialOrd + FromPrimitive + Debug {
    /// Ratio of two integers, exact where the type allows.
    fn ratio(num: u64, den: u64) -> Self {
        Self::from_u64(num).expect("u64 fits") / Self::from_u64(den).expect("u64 fits")
    }

    fn to_f64_lossy(&self) -> f64;

    /// Base-10 logarithm, finite for positive values even when `to_f64_lossy`
    /// would underflow. `-inf` for zero.
    fn log10(&self) -> f64 {
        self.to_f64_lossy().log10()
    }

    fn powi(&self, e: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..e {
            acc = acc * self.clone();
        }
        acc
    }
}

impl Scalar for f32 {
    fn to_f64_lossy(&self) -> f64 {
        *self as f64
    }

    fn powi(&self, e: u32) -> Self {
        f32::powi(*self, e as i32)
    }
}

impl Scalar for f64 {
    fn to_f64_lossy(&self) -> f64 {
        *self
    }

    fn powi(&self, e: u32) -> Self {
        f64::powi(*self, e as i32)
    }
}

impl Scalar for BigRational {
    fn to_f64_lossy(&self) -> f64 {
        rational_to_f64(self)
    }

    fn log10(&self) -> f64 {
        log10_rational(self)
    }

    fn powi(&self, e: u32) -> Self {
        num_traits::pow(self.clone(), e as usize)
    }
}

fn log10_bigint(x: &BigInt) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().unwrap_or(f64::INFINITY).abs().log10();
    }
    let shift = bits - 64;
    let top = (x.abs() >> shift).to_f64().expect("64-bit value");
    top.log10() + shift as f64 * std::f64::consts::LOG10_2
}

/// `log10(|q|)` without going through a possibly underflowing float.
pub fn log10_rational(q: &BigRational) -> f64 {
    if q.is_zero() {
        return f64::NEG_INFINITY;
    }
    log10_bigint(q.numer()) - log10_bigint(q.denom())
}

/// Nearest `f64`; values below the subnormal range become 0.
pub fn rational_to_f64(q: &BigRational) -> f64 {
    if q.is_zero() {
        return 0.0;
    }
    if let (Some(n), Some(d)) = (q.numer().to_f64(), q.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && n != 0.0 {
            let v = n / d;
            if v.is_normal() {
                return v;
            }
        }
    }
    let sign = if q.numer().sign() == Sign::Minus { -1.0 } else { 1.0 };
    sign * 10f64.powf(log10_rational(q))
}

/// Exact rational from a decimal string such as "0.67232".
pub fn parse_decimal(s: &str) -> Option<BigRational> {
    let neg = s.starts_with('-');
    let s = s.trim_start_matches('-');
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let den = num_traits::pow(BigInt::from(10), frac.len());
    let q = BigRational::new(digits, den);
    Some(if neg { -q } else { q })
}

/// Convenience: exact rational `num/den`.
pub fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(num.into(), den.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    #[test]
    fn tiny_rationals_keep_their_magnitude() {
        let q = BigRational::new(BigInt::one(), num_traits::pow(BigInt::from(10), 400));
        assert_eq!(rational_to_f64(&q), 0.0);
        assert!((log10_rational(&q) + 400.0).abs() < 1e-9);
    }

    #[test]
    fn decimal_parsing() {
        assert_eq!(parse_decimal("0.67232").unwrap(), rational(2101, 3125));
        assert_eq!(parse_decimal("3").unwrap(), rational(3, 1));
    }

    #[test]
    fn ratio_is_exact_for_rationals() {
        assert_eq!(<BigRational as Scalar>::ratio(6, 252), rational(1, 42));
        assert!((<f64 as Scalar>::ratio(1, 3) - 1.0 / 3.0).abs() < 1e-15);
    }
}
