//! Scalar abstraction for the exact linear-algebra layer.
//!
//! Constraint systems and the basis reduction are written once against
//! [`Scalar`]. The shipped pipeline instantiates them with an exact rational
//! type (see [`crate::Rational`]); `f64`/`f32` instantiations are useful for
//! quick experiments where divisibility is only approximately meaningful.

use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::{FromPrimitive, Signed, ToPrimitive};

/// Numeric field element usable as a constraint coefficient.
pub trait Scalar:
    Clone + PartialOrd + Signed + FromPrimitive + Debug + Display + Send + Sync + 'static
{
    /// True when the value is a whole number.
    fn is_integral(&self) -> bool;

    /// Lossy conversion used when handing coefficients to the sampler.
    fn as_f64(&self) -> f64;

    fn from_int(v: i64) -> Self {
        Self::from_i64(v).expect("integer representable in scalar type")
    }

    /// `self` divides `other`, i.e. `other / self` is integral. Zero divides nothing.
    fn divides(&self, other: &Self) -> bool {
        if self.is_zero() {
            return false;
        }
        (other.clone() / self.clone()).is_integral()
    }
}

impl Scalar for f64 {
    fn is_integral(&self) -> bool {
        self.is_finite() && self.fract() == 0.0
    }

    fn as_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for f32 {
    fn is_integral(&self) -> bool {
        self.is_finite() && self.fract() == 0.0
    }

    fn as_f64(&self) -> f64 {
        f64::from(*self)
    }
}

macro_rules! ratio_scalar {
    ($int:ty) => {
        impl Scalar for Ratio<$int> {
            fn is_integral(&self) -> bool {
                self.is_integer()
            }

            fn as_f64(&self) -> f64 {
                ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
            }
        }
    };
}

ratio_scalar!(i64);
ratio_scalar!(i128);

impl Scalar for Ratio<BigInt> {
    fn is_integral(&self) -> bool {
        self.is_integer()
    }

    fn as_f64(&self) -> f64 {
        let n = self.numer().to_f64().unwrap_or(f64::NAN);
        let d = self.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    }
}
