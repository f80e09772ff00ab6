//! Gaussian-process machinery shared by the mediator and outcome models:
//! exact regression, sparse variational conditionals, the Gaussian KL
//! divergence and a first-order maximiser.

mod exact;
mod optimize;
mod sparse;

pub use exact::{ExactGp, ExactPosterior, NOISE_PARAM};
pub use optimize::{maximize, FitReport, Maximum, MaximizeOptions};
pub use sparse::{SparseGp, WhitenedProjection};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};

/// `KL(N(m0, S0) ‖ N(m1, S1))`.
pub fn kl_gaussians(m0: &[f64], s0: &Matrix, m1: &[f64], s1: &Matrix) -> Result<f64> {
    let k = m0.len();
    for (found, expected) in [(m1.len(), k), (s0.rows(), k), (s0.cols(), k), (s1.rows(), k), (s1.cols(), k)] {
        if found != expected {
            return Err(Error::DimensionMismatch { expected, found });
        }
    }
    if k == 0 {
        return Ok(0.0);
    }
    let c1 = Cholesky::factor_jittered(s1)?;
    let c0 = Cholesky::factor_jittered(s0)?;
    // tr(S1⁻¹ S0) = ‖L1⁻¹ L0‖_F²
    let m = c1.solve_lower_matrix(c0.factor_matrix());
    let trace: f64 = m.as_slice().iter().map(|v| v * v).sum();
    let diff: alloc::vec::Vec<f64> = m1.iter().zip(m0).map(|(a, b)| a - b).collect();
    let z = c1.solve_lower(&diff);
    let maha: f64 = z.iter().map(|v| v * v).sum();
    let kl = 0.5 * (trace + maha - k as f64 + c1.log_det() - c0.log_det());
    // rounding can leave a tiny negative value for identical inputs
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kl_of_identical_is_zero() {
        let i = Matrix::identity(3);
        assert_abs_diff_eq!(kl_gaussians(&[0.0; 3], &i, &[0.0; 3], &i).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_closed_forms() {
        let i = Matrix::identity(2);
        assert_abs_diff_eq!(kl_gaussians(&[1.0, 0.0], &i, &[0.0, 0.0], &i).unwrap(), 0.5, epsilon = 1e-6);
        let four = Matrix::from_fn(1, 1, |_, _| 4.0);
        let one = Matrix::identity(1);
        let expected = 0.5 * (4.0 - 1.0 - 4f64.ln());
        assert_abs_diff_eq!(kl_gaussians(&[0.0], &four, &[0.0], &one).unwrap(), expected, epsilon = 1e-5);
    }

    #[test]
    fn kl_rejects_shape_mismatch() {
        let i = Matrix::identity(2);
        assert!(kl_gaussians(&[0.0], &i, &[0.0, 0.0], &i).is_err());
    }
}
