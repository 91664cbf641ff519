use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numeric routines are generic over.
///
/// Implemented for `f32` and `f64`. Statistical p-values and the regression
/// tolerances are tuned for `f64`; `f32` is usable for the geometric and
/// smoothing kernels.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Machine epsilon scaled for rank and convergence decisions.
    const TINY: f64;

    /// Converts an `f64` literal. Panics only for values not representable at all.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const TINY: f64 = 1e-6;
}

impl Real for f64 {
    const TINY: f64 = 1e-12;
}

pub(crate) fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::from_count(xs.len())
}
