//! Scalar abstraction shared by the numerical modules.

use nalgebra as na;
use num_traits as nt;

/// Floating point scalar the estimation and analysis code is generic over.
///
/// Implemented for `f32` and `f64`. The solvers are written against this
/// trait, but tolerances in the defaults assume double precision; single
/// precision is useful for the geometry and Fisher layers only.
pub trait Real:
    Copy
    + na::RealField
    + na::Scalar
    + nt::FloatConst
    + nt::FromPrimitive
    + nt::ToPrimitive
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const TWO: Self;
    const HALF: Self;

    /// Converts an `f64` literal into this type.
    fn lit(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    fn is_finite_val(self) -> bool;
}

macro_rules! impl_real {
    ($f:ty) => {
        impl Real for $f {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const TWO: Self = 2.0;
            const HALF: Self = 0.5;

            #[inline]
            fn lit(v: f64) -> Self {
                v as $f
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }

            #[inline]
            fn is_finite_val(self) -> bool {
                self.is_finite()
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Neumaier-compensated sum. Order dependent, so callers that need
/// reproducibility across thread counts must feed terms in a fixed order.
pub fn compensated_sum<T: Real, I: IntoIterator<Item = T>>(terms: I) -> T {
    let mut sum = T::ZERO;
    let mut comp = T::ZERO;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let terms = [1.0e16, 1.0, -1.0e16, 1.0];
        assert_eq!(compensated_sum(terms), 2.0);
    }

    #[test]
    fn literals_round_trip() {
        assert_eq!(<f32 as Real>::lit(0.25), 0.25f32);
        assert_eq!(<f64 as Real>::lit(0.25).to_f64_lossy(), 0.25);
    }
}
