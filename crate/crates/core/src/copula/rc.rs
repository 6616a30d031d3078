//! Regression-classification copula: the conditional probability C* and the
//! (ρ, σ) estimators.

use log::warn;

use super::{clamp_probability, clamp_rho, CDF_CLAMP};
use crate::error::{Error, Result};
use crate::linalg::{pearson, sample_sd};
use crate::scalar::Scalar;
use crate::special::{normal_cdf, normal_pdf, normal_quantile_clamped, sigmoid};

/// Dependence parameters of the R-C task: the latent correlation `rho` and
/// the residual scale `sigma` of the continuous response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcCopulaParams<T> {
    pub rho: T,
    pub sigma: T,
}

impl<T: Scalar> RcCopulaParams<T> {
    pub fn new(rho: T, sigma: T) -> Result<Self> {
        if !(rho.abs() < T::one()) {
            return Err(Error::Parameter(format!(
                "rho must lie in (-1,1), got {rho}"
            )));
        }
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::Parameter(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { rho, sigma })
    }
}

/// C* and its partial derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstarTerms<T> {
    /// Standardized argument u = (Φ⁻¹(μ₂) + ρ z₁) / √(1−ρ²).
    pub u: T,
    /// C* = Φ(u).
    pub value: T,
    /// ∂u/∂μ₂; zero when μ₂ had to be clamped.
    pub du_dmu2: T,
    /// ∂u/∂z₁.
    pub du_dz1: T,
}

impl<T: Scalar> CstarTerms<T> {
    pub fn d_mu2(&self) -> T {
        normal_pdf(self.u) * self.du_dmu2
    }

    pub fn d_z1(&self) -> T {
        normal_pdf(self.u) * self.du_dz1
    }
}

/// Evaluates C*(μ₂, z₁ | ρ) together with the pieces needed for gradients.
/// μ₂ outside [1e-12, 1−1e-12] is clamped (with a warning) and ρ is clamped
/// to |ρ| ≤ 1−1e-6.
pub fn cstar_terms<T: Scalar>(mu2: T, z1: T, rho: T) -> CstarTerms<T> {
    let eps = T::lit(CDF_CLAMP);
    let clamped = !(mu2 >= eps && mu2 <= T::one() - eps);
    if clamped {
        warn!("cstar: mu2 = {mu2} clamped into [{eps}, 1-{eps}]");
    }
    let m = clamp_probability(mu2);
    let rho = clamp_rho(rho);
    let a = normal_quantile_clamped(m, eps);
    let s = (T::one() - rho * rho).sqrt();
    let u = (a + rho * z1) / s;
    let du_dmu2 = if clamped {
        T::zero()
    } else {
        T::one() / (s * normal_pdf(a))
    };
    CstarTerms {
        u,
        value: normal_cdf(u),
        du_dmu2,
        du_dz1: rho / s,
    }
}

/// C*(μ₂, z₁ | ρ) = Φ((Φ⁻¹(μ₂) + ρ z₁) / √(1−ρ²)).
pub fn cstar<T: Scalar>(mu2: T, z1: T, rho: T) -> T {
    if rho == T::zero() && mu2 > T::zero() && mu2 < T::one() {
        // the algebraic collapse is exact, not merely Φ(Φ⁻¹(μ₂))
        return mu2;
    }
    cstar_terms(mu2, z1, rho).value
}

/// Estimates (ρ, σ) from warm-up outputs: ρ is the Pearson correlation of
/// `y1` with Φ⁻¹(𝒮(logit)) and σ the n−1 standard deviation of `y1 − g1hat`.
pub fn estimate_rc_params<T: Scalar>(
    y1: &[T],
    g1hat: &[T],
    g2hat_logit: &[T],
) -> Result<RcCopulaParams<T>> {
    let n = y1.len();
    if g1hat.len() != n || g2hat_logit.len() != n {
        return Err(Error::Dimension(format!(
            "estimate_rc_params: lengths {n}, {}, {} differ",
            g1hat.len(),
            g2hat_logit.len()
        )));
    }
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 observations, got {n}"
        )));
    }
    let eps = T::lit(CDF_CLAMP);
    let scores: Vec<T> = g2hat_logit
        .iter()
        .map(|&l| normal_quantile_clamped(sigmoid(l), eps))
        .collect();
    let rho = pearson(y1, &scores)
        .ok_or_else(|| Error::Degenerate("zero variance in y1 or in the latent scores".into()))?;
    let resid: Vec<T> = y1.iter().zip(g1hat).map(|(&y, &g)| y - g).collect();
    let sigma = sample_sd(&resid);
    if !(sigma > T::zero()) {
        return Err(Error::Degenerate(
            "residuals of the regression head have zero variance".into(),
        ));
    }
    let clamped = clamp_rho(rho);
    if clamped != rho {
        warn!("estimated rho {rho} clamped to {clamped}");
    }
    RcCopulaParams::new(clamped, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_value() {
        // Φ(1/√3) from an arbitrary-precision evaluation
        let c = cstar(0.5_f64, 1.0, 0.5);
        assert!((c - 0.718_148_569_174_613_5).abs() < 1e-12);
    }

    #[test]
    fn rho_zero_is_identity_in_mu2() {
        for &m in &[1e-9_f64, 0.2, 0.5, 0.77, 0.999] {
            for &z in &[-3.0, 0.0, 2.5] {
                assert_eq!(cstar(m, z, 0.0), m);
            }
        }
    }

    #[test]
    fn centered_latent_mean_gives_half() {
        for &r in &[-0.9_f64, -0.3, 0.0, 0.4, 0.95] {
            assert!((cstar(0.5, 0.0, r) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn derivatives_match_differences() {
        let (m, z, r) = (0.3_f64, 0.7, -0.45);
        let t = cstar_terms(m, z, r);
        let h = 1e-6;
        let dm = (cstar(m + h, z, r) - cstar(m - h, z, r)) / (2.0 * h);
        let dz = (cstar(m, z + h, r) - cstar(m, z - h, r)) / (2.0 * h);
        assert!((t.d_mu2() - dm).abs() < 1e-8);
        assert!((t.d_z1() - dz).abs() < 1e-8);
    }

    #[test]
    fn clamps_boundary_mu2() {
        let c = cstar(1.0_f64, 0.0, 0.3);
        assert!(c > 0.0 && c < 1.0);
        assert_eq!(cstar_terms(0.0_f64, 1.0, 0.3).du_dmu2, 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(RcCopulaParams::new(1.0_f64, 1.0).is_err());
        assert!(RcCopulaParams::new(0.2_f64, 0.0).is_err());
        assert!(RcCopulaParams::new(0.2_f64, 2.0).is_ok());
    }

    #[test]
    fn perfect_correlation_is_clamped() {
        let logits = [-1.5_f64, -0.2, 0.1, 0.8, 2.0];
        let y1: Vec<f64> = logits
            .iter()
            .map(|&l| normal_quantile_clamped(sigmoid(l), CDF_CLAMP))
            .collect();
        let g1 = [0.0, 0.1, -0.1, 0.2, 0.0];
        let p = estimate_rc_params(&y1, &g1, &logits).unwrap();
        assert!((p.rho - (1.0 - 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_variance_is_degenerate() {
        let y1 = [1.0_f64, 2.0, 3.0];
        let logits = [0.1, 0.5, -0.3];
        assert!(matches!(
            estimate_rc_params(&y1, &y1, &logits),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn constant_logits_are_degenerate() {
        let y1 = [1.0_f64, 2.0, 3.0];
        let g1 = [0.0, 0.0, 0.0];
        let logits = [0.4, 0.4, 0.4];
        assert!(matches!(
            estimate_rc_params(&y1, &g1, &logits),
            Err(Error::Degenerate(_))
        ));
    }
}
