//! Linear-Gaussian inverse problem data.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, invalid, Error, Result};
use crate::Real;

/// Observations `y`, noise covariance `Γ`, prior covariance `C₀`,
/// regularization weight `λ` and, when known, the truth `x†`.
///
/// `Γ` and `C₀` are checked to be symmetric positive definite on
/// construction; their inverses and the Cholesky factor of `Γ` are cached.
#[derive(Debug, Clone)]
pub struct InverseProblemSpec<T: Real> {
    y: DVector<T>,
    gamma: DMatrix<T>,
    gamma_inv: DMatrix<T>,
    gamma_lower: DMatrix<T>,
    c0: DMatrix<T>,
    c0_inv: DMatrix<T>,
    lambda: T,
    truth: Option<DVector<T>>,
}

pub(crate) fn spd_cholesky<T: Real>(m: &DMatrix<T>, what: &'static str) -> Result<Cholesky<T, Dyn>> {
    if !m.is_square() {
        return Err(invalid(format!("{what} must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.finite()) {
        return Err(invalid(format!("{what} has non-finite entries")));
    }
    let scale = m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > T::lit(1e-10) * scale {
        return Err(invalid(format!("{what} is not symmetric")));
    }
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite(what))
}

impl<T: Real> InverseProblemSpec<T> {
    pub fn new(y: DVector<T>, gamma: DMatrix<T>, c0: DMatrix<T>, lambda: T) -> Result<Self> {
        check_dim("noise covariance", y.len(), gamma.nrows())?;
        if y.iter().any(|v| !v.finite()) {
            return Err(invalid("observations contain non-finite values"));
        }
        if !(lambda >= T::zero()) || !lambda.finite() {
            return Err(invalid(format!("regularization weight must be nonnegative, got {lambda}")));
        }
        let gamma_chol = spd_cholesky(&gamma, "noise covariance")?;
        let c0_chol = spd_cholesky(&c0, "prior covariance")?;
        Ok(Self {
            y,
            gamma_inv: gamma_chol.inverse(),
            gamma_lower: gamma_chol.l(),
            gamma,
            c0_inv: c0_chol.inverse(),
            c0,
            lambda,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: DVector<T>) -> Result<Self> {
        check_dim("truth", self.n_x(), truth.len())?;
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn n_x(&self) -> usize {
        self.c0.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn gamma(&self) -> &DMatrix<T> {
        &self.gamma
    }

    pub fn gamma_inv(&self) -> &DMatrix<T> {
        &self.gamma_inv
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = Γ`.
    pub fn gamma_lower(&self) -> &DMatrix<T> {
        &self.gamma_lower
    }

    pub fn c0(&self) -> &DMatrix<T> {
        &self.c0
    }

    pub fn c0_inv(&self) -> &DMatrix<T> {
        &self.c0_inv
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn truth(&self) -> Option<&DVector<T>> {
        self.truth.as_ref()
    }

    /// `½‖Γ^{-1/2}(F x − y)‖²`.
    pub fn data_misfit(&self, f: &DMatrix<T>, x: &DVector<T>) -> Result<T> {
        check_dim("forward matrix rows", self.n_y(), f.nrows())?;
        check_dim("parameter", f.ncols(), x.len())?;
        let r = f * x - &self.y;
        Ok(r.dot(&(&self.gamma_inv * &r)) * T::lit(0.5))
    }

    /// `FᵀΓ⁻¹F + λ C₀⁻¹`.
    pub fn normal_matrix(&self, f: &DMatrix<T>, lambda: T) -> DMatrix<T> {
        f.transpose() * &self.gamma_inv * f + &self.c0_inv * lambda
    }

    /// Minimizer `(FᵀΓ⁻¹F + λC₀⁻¹)⁻¹ FᵀΓ⁻¹ y` of the regularized misfit.
    pub fn tikhonov_minimizer(&self, f: &DMatrix<T>) -> Result<DVector<T>> {
        self.tikhonov_minimizer_with(f, self.lambda)
    }

    pub fn tikhonov_minimizer_with(&self, f: &DMatrix<T>, lambda: T) -> Result<DVector<T>> {
        check_dim("forward matrix rows", self.n_y(), f.nrows())?;
        check_dim("forward matrix columns", self.n_x(), f.ncols())?;
        let a = self.normal_matrix(f, lambda);
        let rhs = f.transpose() * (&self.gamma_inv * &self.y);
        let chol = Cholesky::new(a).ok_or(Error::NotPositiveDefinite("regularized normal matrix"))?;
        Ok(chol.solve(&rhs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_covariances() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let c0 = DMatrix::<f64>::identity(3, 3);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(InverseProblemSpec::new(y.clone(), singular, c0.clone(), 1.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(InverseProblemSpec::new(y.clone(), asym, c0.clone(), 1.0).is_err());
        let wrong = DMatrix::<f64>::identity(3, 3);
        assert!(InverseProblemSpec::new(y.clone(), wrong, c0.clone(), 1.0).is_err());
        assert!(InverseProblemSpec::new(y, DMatrix::identity(2, 2), c0, -1.0).is_err());
    }

    #[test]
    fn scalar_minimizer() {
        let p = InverseProblemSpec::new(
            DVector::from_element(1, 2.0),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            1.0,
        )
        .unwrap();
        let x: DVector<f64> = p.tikhonov_minimizer(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
    }
}
