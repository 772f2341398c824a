//! Dense helpers for the small symmetric systems used by the mixture field.

use crate::scalar::Scalar;

/// Lower Cholesky factor of a row-major `d x d` SPD matrix, or `None` if not positive-definite.
pub(crate) fn cholesky<T: Scalar>(a: &[T], d: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for p in 0..j {
                s -= l[i * d + p] * l[j * d + p];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T y = r` in place.
pub(crate) fn cholesky_solve<T: Scalar>(l: &[T], d: usize, r: &mut [T]) {
    for i in 0..d {
        let mut s = r[i];
        for p in 0..i {
            s -= l[i * d + p] * r[p];
        }
        r[i] = s / l[i * d + i];
    }
    for i in (0..d).rev() {
        let mut s = r[i];
        for p in i + 1..d {
            s -= l[p * d + i] * r[p];
        }
        r[i] = s / l[i * d + i];
    }
}

/// `ln det(L L^T)`.
pub(crate) fn cholesky_logdet<T: Scalar>(l: &[T], d: usize) -> T {
    let two = T::lit(2.0);
    (0..d).map(|i| two * l[i * d + i].ln()).sum()
}

pub(crate) fn matvec<T: Scalar>(a: &[T], d: usize, x: &[T], out: &mut [T]) {
    for i in 0..d {
        out[i] = (0..d).map(|j| a[i * d + j] * x[j]).sum();
    }
}
