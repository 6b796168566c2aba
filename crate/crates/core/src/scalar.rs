//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Real scalar type the estimators are generic over (`f32` or `f64`).
///
/// Everything math-related goes through [`RealField`]; the two helpers exist
/// because constants and RNG draws are produced in `f64` and narrowed.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    /// Widens to `f64` (used for I/O and random sampling).
    #[inline]
    fn f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar widens to f64")
    }

    #[inline]
    fn from_count(v: usize) -> Self {
        Self::c(v as f64)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Mean of a slice, `None` when empty.
pub(crate) fn mean<T: Real>(xs: impl IntoIterator<Item = T>) -> Option<T> {
    let mut sum = T::zero();
    let mut n = 0usize;
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / T::from_count(n))
}
