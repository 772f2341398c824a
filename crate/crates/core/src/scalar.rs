//! Floating-point scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating point: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Root-mean-square of the elementwise difference `a - b`.
pub(crate) fn rms_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return T::zero();
    }
    let ss: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    (ss / T::from_count(a.len())).sqrt()
}

pub(crate) fn rms<T: Scalar>(a: &[T]) -> T {
    if a.is_empty() {
        return T::zero();
    }
    let ss: T = a.iter().map(|&x| x * x).sum();
    (ss / T::from_count(a.len())).sqrt()
}

/// Relative RMS change of `new` with respect to `old`: `rms(new - old) / rms(old)`.
///
/// Falls back to the absolute RMS change when `old` is identically zero.
pub fn relative_rms<T: Scalar>(new: &[T], old: &[T]) -> T {
    let num = rms_diff(new, old);
    let den = rms(old);
    if den > T::zero() {
        num / den
    } else {
        num
    }
}
