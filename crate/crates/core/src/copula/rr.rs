//! Regression-regression copula parameters: the Gaussian-error estimator of
//! (Γ, σ) and the nonparametric Γ built from smoothed residual CDFs.

use log::warn;

use super::smooth::SmoothedResidualCdf;
use super::{clamp_rho, EIGEN_FLOOR};
use crate::error::{Error, Result};
use crate::linalg::{pearson, project_correlation, sample_sd, symmetric_eigen, Matrix};
use crate::scalar::Scalar;

/// Gaussian-error copula parameters: correlation Γ, marginal scales σⱼ and
/// the implied covariance Σ = diag(σ) Γ diag(σ).
#[derive(Debug, Clone, PartialEq)]
pub struct RrGaussianParams<T> {
    gamma: Matrix<T>,
    sigmas: Vec<T>,
    sigma_mat: Matrix<T>,
}

impl<T: Scalar> RrGaussianParams<T> {
    /// Validates Γ (symmetric, unit diagonal, smallest eigenvalue > 1e-8)
    /// and the scales, then forms Σ.
    pub fn new(gamma: Matrix<T>, sigmas: Vec<T>) -> Result<Self> {
        check_correlation(&gamma)?;
        let p = gamma.rows();
        if sigmas.len() != p {
            return Err(Error::Dimension(format!(
                "{} scales for a {p}x{p} correlation",
                sigmas.len()
            )));
        }
        if let Some(s) = sigmas.iter().find(|s| !(**s > T::zero()) || !s.is_finite()) {
            return Err(Error::Parameter(format!(
                "marginal sd must be positive, got {s}"
            )));
        }
        let mut sigma_mat = Matrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                sigma_mat[(i, j)] = sigmas[i] * gamma[(i, j)] * sigmas[j];
            }
        }
        Ok(Self {
            gamma,
            sigmas,
            sigma_mat,
        })
    }

    pub fn gamma(&self) -> &Matrix<T> {
        &self.gamma
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigmas
    }

    pub fn sigma_mat(&self) -> &Matrix<T> {
        &self.sigma_mat
    }

    pub fn p(&self) -> usize {
        self.sigmas.len()
    }
}

/// Nonparametric copula parameters: Γ of the Gaussian scores plus one
/// smoothed CDF per response.
#[derive(Debug, Clone, PartialEq)]
pub struct RrNonparamParams<T> {
    pub gamma: Matrix<T>,
    pub cdfs: Vec<SmoothedResidualCdf<T>>,
}

impl<T: Scalar> RrNonparamParams<T> {
    pub fn new(gamma: Matrix<T>, cdfs: Vec<SmoothedResidualCdf<T>>) -> Result<Self> {
        check_correlation(&gamma)?;
        if cdfs.len() != gamma.rows() {
            return Err(Error::Dimension(format!(
                "{} marginal CDFs for a {}x{} correlation",
                cdfs.len(),
                gamma.rows(),
                gamma.rows()
            )));
        }
        Ok(Self { gamma, cdfs })
    }

    pub fn p(&self) -> usize {
        self.cdfs.len()
    }
}

/// Kernel bandwidth choice for the smoothed marginal CDFs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth<T> {
    /// Silverman's rule, computed per column.
    #[default]
    Silverman,
    /// The same fixed ψ₀ for every column.
    Fixed(T),
}

fn check_correlation<T: Scalar>(gamma: &Matrix<T>) -> Result<()> {
    let p = gamma.rows();
    if p == 0 || gamma.cols() != p {
        return Err(Error::Dimension(format!(
            "correlation matrix must be square and nonempty, got {}x{}",
            gamma.rows(),
            gamma.cols()
        )));
    }
    if !gamma.is_symmetric(T::lit(1e-12)) {
        return Err(Error::Parameter(
            "correlation matrix is not symmetric".into(),
        ));
    }
    for i in 0..p {
        if (gamma[(i, i)] - T::one()).abs() > T::lit(1e-12) {
            return Err(Error::Parameter(format!(
                "diagonal entry {i} is {}",
                gamma[(i, i)]
            )));
        }
    }
    let (values, _) = symmetric_eigen(gamma)?;
    if !(values[0] > T::lit(EIGEN_FLOOR)) {
        return Err(Error::Parameter(format!(
            "correlation matrix is not positive definite (min eigenvalue {})",
            values[0]
        )));
    }
    Ok(())
}

/// Pearson correlation matrix of `columns` with off-diagonals clamped to
/// |γ| ≤ 1−1e-6 and, if needed, projected to min eigenvalue > 1e-8.
pub fn correlation_matrix<T: Scalar>(columns: &[Vec<T>]) -> Result<Matrix<T>> {
    let p = columns.len();
    let mut g = Matrix::identity(p);
    for s in 0..p {
        for j in (s + 1)..p {
            let r = pearson(&columns[s], &columns[j])
                .ok_or_else(|| Error::Degenerate(format!("column {s} or {j} is constant")))?;
            let c = clamp_rho(r);
            if c != r {
                warn!("correlation ({s},{j}) = {r} clamped to {c}");
            }
            g[(s, j)] = c;
            g[(j, s)] = c;
        }
    }
    let (g, projected) = project_correlation(&g, T::lit(EIGEN_FLOOR))?;
    if projected {
        warn!("estimated correlation matrix projected to positive definite");
    }
    Ok(g)
}

fn columns_of<T: Scalar>(residuals: &Matrix<T>) -> Result<Vec<Vec<T>>> {
    let n = residuals.rows();
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 residual rows, got {n}"
        )));
    }
    if residuals.cols() == 0 {
        return Err(Error::Dimension("residual matrix has no columns".into()));
    }
    let cols: Vec<Vec<T>> = (0..residuals.cols()).map(|j| residuals.column(j)).collect();
    for (j, c) in cols.iter().enumerate() {
        if !(sample_sd(c) > T::zero()) {
            return Err(Error::Degenerate(format!(
                "residual column {j} is constant"
            )));
        }
    }
    Ok(cols)
}

/// Γ̂ = correlation of the residual columns, σ̂ⱼ = their n−1 standard deviations.
pub fn estimate_rr_gaussian_params<T: Scalar>(
    residuals: &Matrix<T>,
) -> Result<RrGaussianParams<T>> {
    let cols = columns_of(residuals)?;
    let sigmas = cols.iter().map(|c| sample_sd(c)).collect();
    RrGaussianParams::new(correlation_matrix(&cols)?, sigmas)
}

/// Fits one smoothed CDF per centered residual column and the correlation
/// of the Gaussian scores Φ⁻¹(F̃ⱼ(ẽᵢⱼ)).
pub fn fit_nonparam<T: Scalar>(
    residuals: &Matrix<T>,
    bandwidth: Bandwidth<T>,
) -> Result<RrNonparamParams<T>> {
    let cols = columns_of(residuals)?;
    let mut cdfs = Vec::with_capacity(cols.len());
    let mut scores = Vec::with_capacity(cols.len());
    for c in &cols {
        let cdf = match bandwidth {
            Bandwidth::Silverman => SmoothedResidualCdf::new(c)?,
            Bandwidth::Fixed(bw) => SmoothedResidualCdf::with_bandwidth(c, bw)?,
        };
        let centered: Vec<T> = c.iter().map(|&v| v - cdf.offset()).collect();
        scores.push(cdf.gaussian_scores(&centered));
        cdfs.push(cdf);
    }
    RrNonparamParams::new(correlation_matrix(&scores)?, cdfs)
}

/// Γ̂ of the nonparametric (smoothed-CDF Gaussian-score) estimator.
pub fn estimate_gamma_nonparam<T: Scalar>(
    residuals: &Matrix<T>,
    bandwidth: Bandwidth<T>,
) -> Result<Matrix<T>> {
    Ok(fit_nonparam(residuals, bandwidth)?.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_columns(a: &[f64], b: &[f64]) -> Matrix<f64> {
        let rows: Vec<Vec<f64>> = a.iter().zip(b).map(|(&x, &y)| vec![x, y]).collect();
        Matrix::from_rows(&rows).unwrap()
    }

    fn base() -> Vec<f64> {
        vec![
            0.3, -1.2, 0.8, 2.1, -0.4, 0.05, -0.9, 1.3, -2.2, 0.6, 0.0, 1.7,
        ]
    }

    #[test]
    fn linear_dependence() {
        let a = base();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let p = estimate_rr_gaussian_params(&two_columns(&a, &b)).unwrap();
        assert!((p.gamma()[(0, 1)] - (1.0 - 1e-6)).abs() < 1e-12);
        assert!((p.sigmas()[1] / p.sigmas()[0] - 2.0).abs() < 1e-12);
        let s = p.sigma_mat();
        assert!((s[(0, 1)] - p.sigmas()[0] * p.sigmas()[1] * p.gamma()[(0, 1)]).abs() < 1e-12);
    }

    #[test]
    fn single_column() {
        let a = base();
        let m = Matrix::from_vec(a.len(), 1, a.clone()).unwrap();
        let p = estimate_rr_gaussian_params(&m).unwrap();
        assert_eq!(p.gamma(), &Matrix::identity(1));
        assert!((p.sigmas()[0] - sample_sd(&a)).abs() < 1e-15);
    }

    #[test]
    fn nonparam_scaled_copy_is_perfectly_correlated() {
        let a = base();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let g = estimate_gamma_nonparam(&two_columns(&a, &b), Bandwidth::Silverman).unwrap();
        assert!((g[(0, 1)] - 1.0).abs() <= 1e-6 + 1e-12);
        assert_eq!(g[(0, 0)], 1.0);
        assert!(g.is_symmetric(0.0));
    }

    #[test]
    fn constant_column_is_degenerate() {
        let a = base();
        let b = vec![1.0; a.len()];
        let m = two_columns(&a, &b);
        assert!(matches!(
            estimate_rr_gaussian_params(&m),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            estimate_gamma_nonparam(&m, Bandwidth::Silverman),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn rejects_invalid_gamma() {
        let g = Matrix::from_rows(&[vec![1.0_f64, 1.2], vec![1.2, 1.0]]).unwrap();
        assert!(RrGaussianParams::new(g, vec![1.0, 1.0]).is_err());
        let g = Matrix::from_rows(&[vec![1.0_f64, 0.2], vec![0.3, 1.0]]).unwrap();
        assert!(RrGaussianParams::new(g, vec![1.0, 1.0]).is_err());
        assert!(RrGaussianParams::new(Matrix::<f64>::identity(2), vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn projection_floors_eigenvalues() {
        // pairwise correlations that cannot coexist
        let cols = vec![
            vec![1.0_f64, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![1.0, 2.1, 2.9, 4.2, 4.8, 6.1],
            vec![6.0, 5.0, 4.1, 2.9, 2.0, 1.1],
        ];
        let g = correlation_matrix(&cols).unwrap();
        let (vals, _) = symmetric_eigen(&g).unwrap();
        assert!(vals[0] > EIGEN_FLOOR);
        for i in 0..3 {
            assert!((g[(i, i)] - 1.0).abs() < 1e-12);
        }
    }
}
