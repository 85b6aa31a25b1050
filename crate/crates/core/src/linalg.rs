//! Small dense solves, delegated to nalgebra in double precision.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// Solves `A x = b` for a row-major symmetric positive-definite `A`,
/// overwriting `b`. Returns `false` if the Cholesky factorization fails.
pub(crate) fn spd_solve<T: Real>(a: &[T], n: usize, b: &mut [T]) -> bool {
    let matrix = DMatrix::from_row_iterator(n, n, a.iter().map(|x| x.to_f64_lossy()));
    let Some(factor) = matrix.cholesky() else {
        return false;
    };
    let x = factor.solve(&DVector::from_iterator(n, b.iter().map(|x| x.to_f64_lossy())));
    if x.iter().any(|v| !v.is_finite()) {
        return false;
    }
    for (dst, &v) in b.iter_mut().zip(x.iter()) {
        *dst = T::lit(v);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let mut x = [1.0, -2.0, 0.5];
        let b = x;
        assert!(spd_solve(&a, 3, &mut x));
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut b = [1.0f64, 1.0];
        assert!(!spd_solve(&[1.0, 2.0, 2.0, 1.0], 2, &mut b));
    }
}
