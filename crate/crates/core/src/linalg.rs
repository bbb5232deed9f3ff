//! Small dense solves for normal equations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// What to do with a rank-deficient Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularPolicy {
    #[default]
    Error,
    Pseudoinverse,
}

const RANK_TOL: f64 = 1e-12;

/// Solves `a x = b` for symmetric positive semi-definite `a`.
///
/// Returns `None` when `a` is numerically singular and the policy is
/// [`SingularPolicy::Error`].
pub fn solve_spd(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    policy: SingularPolicy,
) -> Option<DVector<f64>> {
    if a.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    if a.nrows() == 1 {
        let d = a[(0, 0)];
        if d > 0.0 && d.is_finite() {
            return Some(DVector::from_element(1, b[0] / d));
        }
        return match policy {
            SingularPolicy::Error => None,
            SingularPolicy::Pseudoinverse => Some(DVector::zeros(1)),
        };
    }
    if is_well_conditioned_pd(a) {
        if let Some(chol) = a.clone().cholesky() {
            return Some(chol.solve(b));
        }
    }
    match policy {
        SingularPolicy::Error => None,
        SingularPolicy::Pseudoinverse => Some(pinv_solve(a, b)),
    }
}

/// Inverse of a symmetric positive definite matrix, or its pseudoinverse
/// under the permissive policy.
pub fn inverse_spd(a: &DMatrix<f64>, policy: SingularPolicy) -> Option<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    if is_well_conditioned_pd(a) {
        if let Some(chol) = a.clone().cholesky() {
            return Some(chol.inverse());
        }
    }
    match policy {
        SingularPolicy::Error => None,
        SingularPolicy::Pseudoinverse => {
            let svd = a.clone().svd(true, true);
            let tol = RANK_TOL * svd.singular_values.max().max(f64::MIN_POSITIVE);
            svd.pseudo_inverse(tol).ok()
        }
    }
}

fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let tol = RANK_TOL * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, tol)
        .unwrap_or_else(|_| DVector::zeros(b.len()))
}

/// Cheap positive-definiteness check: an LDL-style pivot test relative to
/// the largest diagonal entry.
pub fn is_well_conditioned_pd(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return false;
    }
    let Some(chol) = a.clone().cholesky() else {
        return false;
    };
    let l = chol.l_dirty();
    (0..n).all(|i| l[(i, i)] * l[(i, i)] > RANK_TOL * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = solve_spd(&a, &b, SingularPolicy::Error).unwrap();
        // explicit inverse: 1/11 * [[3,-1],[-1,4]]
        assert!((x[0] - (3.0 - 2.0) / 11.0).abs() < 1e-14);
        assert!((x[1] - (-1.0 + 8.0) / 11.0).abs() < 1e-14);
    }

    #[test]
    fn singular_respects_policy() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        assert!(solve_spd(&a, &b, SingularPolicy::Error).is_none());
        let x = solve_spd(&a, &b, SingularPolicy::Pseudoinverse).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
