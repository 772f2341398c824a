//! The elementary first-order step and the rectification map.

use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Latent increment of one step, with the drift value that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDelta<T> {
    pub delta: Vec<T>,
    pub drift: Vec<T>,
}

/// `delta = (t_next - t) * f(x, t)`. Exactly one field evaluation.
pub fn euler_step<T: Scalar, F: DriftField<T> + ?Sized>(
    field: &F,
    x: &[T],
    t: T,
    t_next: T,
) -> Result<StepDelta<T>> {
    if !(t_next > t) {
        return Err(Error::invalid(format!(
            "euler step needs t_next > t (got t = {t}, t_next = {t_next})"
        )));
    }
    if x.len() != field.dim() {
        return Err(Error::invalid(format!(
            "latent has dimension {}, field expects {}",
            x.len(),
            field.dim()
        )));
    }
    let drift = field.eval(x, t);
    Ok(StepDelta {
        delta: scaled(&drift, t_next - t),
        drift,
    })
}

/// Euler increment from an already-evaluated drift value.
#[inline]
pub(crate) fn scaled<T: Scalar>(drift: &[T], h: T) -> Vec<T> {
    drift.iter().map(|&f| h * f).collect()
}

/// `delta_t * (f_acc - f_coarse) + (x_acc - x_coarse)`.
///
/// Drift values are supplied by the caller, so rectification costs no field
/// evaluations.
pub fn rectify<T: Scalar>(
    x_acc: &[T],
    x_coarse: &[T],
    f_acc: &[T],
    f_coarse: &[T],
    delta_t: T,
) -> Result<Vec<T>> {
    let d = x_acc.len();
    if x_coarse.len() != d || f_acc.len() != d || f_coarse.len() != d {
        return Err(Error::invalid("rectify: dimension mismatch"));
    }
    if !(delta_t > T::zero()) {
        return Err(Error::invalid("rectify: delta_t must be positive"));
    }
    Ok((0..d)
        .map(|i| delta_t * (f_acc[i] - f_coarse[i]) + (x_acc[i] - x_coarse[i]))
        .collect())
}
