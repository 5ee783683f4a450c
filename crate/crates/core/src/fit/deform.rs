//! Closed-form regularized deformation solve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::FitError;
use crate::learn::{ShapeVector, SlcModel};
use crate::mesh_io::Point;

/// Factorization of `CᵀC + λ·diag(μ̂⁻¹)` for one model and `λ`, reusable
/// across fitting iterations.
#[derive(Debug, Clone)]
pub struct DeformationSolver {
    basis: DMatrix<f64>,
    cholesky: Cholesky<f64, Dyn>,
}

impl DeformationSolver {
    pub fn new(model: &SlcModel, lambda: f64) -> Result<Self, FitError> {
        Self::with_regularizer(&model.basis, &(model.inverse_weights() * lambda), lambda)
    }

    /// `regularizer` is the diagonal added to `CᵀC`.
    pub(crate) fn with_regularizer(
        basis: &DMatrix<f64>,
        regularizer: &DVector<f64>,
        lambda: f64,
    ) -> Result<Self, FitError> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(FitError::InvalidParam(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let mut system = basis.tr_mul(basis);
        for j in 0..system.nrows() {
            system[(j, j)] += regularizer[j];
        }
        let scale = system.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let cholesky = Cholesky::new(system).ok_or(FitError::SingularSystem)?;
        let l = cholesky.l_dirty();
        let tiny = 1e-12 * scale.max(f64::MIN_POSITIVE);
        if (0..l.nrows()).any(|j| !(l[(j, j)] * l[(j, j)] > tiny)) {
            return Err(FitError::SingularSystem);
        }
        Ok(DeformationSolver {
            basis: basis.clone(),
            cholesky,
        })
    }

    /// `α` for the residual `X = linearize(targets − current)`.
    pub fn solve(&self, targets: &[Point], current: &[Point]) -> Result<DVector<f64>, FitError> {
        let m = self.basis.nrows() / 3;
        if targets.len() != m || current.len() != m {
            return Err(FitError::DimensionMismatch {
                expected: m,
                found: if targets.len() != m { targets.len() } else { current.len() },
            });
        }
        let x = DVector::from_iterator(
            3 * m,
            targets.iter().zip(current).flat_map(|(t, s)| {
                let d = t - s;
                [d.x, d.y, d.z]
            }),
        );
        Ok(self.cholesky.solve(&self.basis.tr_mul(&x)))
    }

    /// `current + C·α`.
    pub fn apply(&self, current: &[Point], alpha: &DVector<f64>) -> Vec<Point> {
        let delta = ShapeVector::new(&self.basis * alpha).to_points();
        current.iter().zip(delta).map(|(p, d)| p + d.coords).collect()
    }
}

/// `α = (CᵀC + λ·diag(μ̂⁻¹))⁻¹·Cᵀ·X` with `X = linearize(targets − current)`.
pub fn solve_deformation(
    targets: &[Point],
    current: &[Point],
    model: &SlcModel,
    lambda: f64,
) -> Result<DVector<f64>, FitError> {
    DeformationSolver::new(model, lambda)?.solve(targets, current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::ShapeVector;

    fn model(basis: DMatrix<f64>, weights: DVector<f64>) -> SlcModel {
        let m = basis.nrows() / 3;
        SlcModel {
            mean: ShapeVector::new(DVector::zeros(3 * m)),
            directions: DMatrix::zeros(2, basis.ncols()),
            basis,
            weights,
            hyperparams: None,
        }
    }

    fn pts(v: &[f64]) -> Vec<Point> {
        ShapeVector::new(DVector::from_row_slice(v)).to_points()
    }

    #[test]
    fn zero_residual_gives_zero_alpha() {
        let m = model(DMatrix::from_fn(6, 2, |r, c| (r * 2 + c) as f64 + 1.0), DVector::from_element(2, 0.5));
        let s = pts(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let a = solve_deformation(&s, &s, &m, 1.0).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_dimensional_least_squares() {
        let b = DVector::from_row_slice(&[1.0, 0.0, 2.0, -1.0, 0.5, 0.0]);
        let m = model(DMatrix::from_column_slice(6, 1, b.as_slice()), DVector::from_element(1, 1.0));
        let current = pts(&[0.0; 6]);
        let x = [0.3, 1.0, -2.0, 0.7, 0.1, 5.0];
        let a = solve_deformation(&pts(&x), &current, &m, 0.0).unwrap();
        let xv = DVector::from_row_slice(&x);
        assert!((a[0] - b.dot(&xv) / b.dot(&b)).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_unregularized_is_singular() {
        let m = model(DMatrix::from_fn(6, 2, |r, _| r as f64), DVector::from_element(2, 1.0));
        let s = pts(&[0.0; 6]);
        assert!(matches!(solve_deformation(&s, &s, &m, 0.0), Err(FitError::SingularSystem)));
        assert!(solve_deformation(&s, &s, &m, 1.0).is_ok());
    }
}
