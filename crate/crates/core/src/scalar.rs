//! Numeric abstraction shared by the timing math.
//!
//! Times, rates and bandwidths are carried in a [`Scalar`]. Ordinary runs use
//! `f64`; the exact rational instantiations let tests compare closed forms
//! against step-wise oracles without rounding noise.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Exact rational scalar used by oracle tests.
pub type Exact = Ratio<i128>;

pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Smallest integral value not below `self`.
    fn ceil(self) -> Self;

    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar")
    }

    fn from_wide(n: u128) -> Self {
        Self::from_u128(n).expect("count representable in scalar")
    }

    /// Converts a literal configuration value. Rationals approximate it by
    /// continued fractions, which is exact for the decimal constants used in
    /// presets.
    fn from_real(x: f64) -> Self {
        Self::from_f64(x).expect("finite configuration value")
    }

    fn to_real(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn is_finite_value(self) -> bool {
        self.to_real().is_finite()
    }
}

impl Scalar for f64 {
    fn ceil(self) -> Self {
        f64::ceil(self)
    }
}

impl Scalar for f32 {
    fn ceil(self) -> Self {
        f32::ceil(self)
    }
}

impl Scalar for Ratio<i64> {
    fn ceil(self) -> Self {
        Ratio::ceil(&self)
    }
}

impl Scalar for Ratio<i128> {
    fn ceil(self) -> Self {
        Ratio::ceil(&self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_parses_preset_literals_exactly() {
        assert_eq!(Exact::from_real(30e-9), Exact::new(3, 100_000_000));
        assert_eq!(Exact::from_real(0.47e12), Exact::from_integer(470_000_000_000));
        assert_eq!(Exact::from_real(0.8), Exact::new(4, 5));
    }

    #[test]
    fn ceil_and_max() {
        assert_eq!(Scalar::ceil(Exact::new(7, 2)), Exact::from_integer(4));
        assert_eq!(Scalar::ceil(2.1f64), 3.0);
        assert_eq!(3.0f32.max_of(4.0), 4.0);
    }
}
