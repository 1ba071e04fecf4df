use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_ATTEMPTS: usize = 3;

/// Solves the symmetric positive (semi)definite system `a·x = b` by Cholesky.
///
/// `a` is row-major k×k. On failure the diagonal is jittered by
/// 1e-10·trace/k and the factorization retried, up to three attempts.
pub fn solve_spd(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let k = b.len();
    debug_assert_eq!(a.len(), k * k);
    let mut mat = DMatrix::from_row_slice(k, k, a);
    let rhs = DVector::from_column_slice(b);
    let trace: f64 = (0..k).map(|i| mat[(i, i)]).sum();
    let jitter = 1e-10 * (trace / k as f64).abs().max(f64::MIN_POSITIVE);
    for attempt in 0..MAX_ATTEMPTS {
        if attempt > 0 {
            for i in 0..k {
                mat[(i, i)] += jitter;
            }
        }
        if let Some(chol) = mat.clone().cholesky() {
            let x = chol.solve(&rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x.iter().copied().collect());
            }
        }
    }
    Err(Error::Singular {
        attempts: MAX_ATTEMPTS,
    })
}

/// Eigenvalues of a symmetric row-major k×k matrix.
pub fn symmetric_eigenvalues(a: &[f64], k: usize) -> Vec<f64> {
    let mat = DMatrix::from_row_slice(k, k, a);
    mat.symmetric_eigenvalues().iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let x = solve_spd(&[4.0, 1.0, 1.0, 3.0], &[1.0, 2.0]).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn zero_matrix_is_singular() {
        assert!(matches!(
            solve_spd(&[0.0, 0.0, 0.0, 0.0], &[1.0, 1.0]),
            Err(Error::Singular { attempts: 3 })
        ));
    }

    #[test]
    fn eigenvalues_of_diagonal() {
        let mut e = symmetric_eigenvalues(&[2.0, 0.0, 0.0, 5.0], 2);
        e.sort_by(f64::total_cmp);
        assert_eq!(e, vec![2.0, 5.0]);
    }
}
