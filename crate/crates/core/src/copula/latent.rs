//! Monte-Carlo check that a thresholded latent Gaussian score reproduces the
//! R-C copula: with z₁ ~ N(0,1) and z₂ = Φ⁻¹(μ₂) + ρ z₁ + √(1−ρ²) ξ,
//! P(z₂ > 0) = μ₂ and P(z₂ > 0 | z₁) = C*(μ₂, z₁ | ρ).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::rc::cstar;
use crate::error::{Error, Result};
use crate::special::normal_quantile;

pub const MIN_DRAWS: usize = 10_000;
/// Number of equal-width z₁ bins on [−3, 3].
pub const BINS: usize = 20;
const BIN_RANGE: f64 = 3.0;

/// Conditional comparison over one z₁ bin.
#[derive(Debug, Clone, Serialize)]
pub struct BinCheck {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean of z₁ over the draws in the bin.
    pub center: f64,
    /// Fraction of the bin's draws with z₂ > 0.
    pub empirical: f64,
    /// Mean of C*(μ₂, z₁ᵢ | ρ) over the bin's draws.
    pub expected: f64,
    /// C* evaluated at the bin's mean z₁.
    pub at_center: f64,
    /// Binomial standard error √(c(1−c)/count) at c = `expected`.
    pub se: f64,
}

impl BinCheck {
    pub fn z(&self) -> f64 {
        if self.se > 0.0 {
            (self.empirical - self.expected).abs() / self.se
        } else if self.empirical == self.expected {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, k: f64) -> bool {
        self.z() <= k
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatentScoreReport {
    pub mu2: f64,
    pub rho: f64,
    pub n_draws: usize,
    pub p_hat: f64,
    /// √(μ₂(1−μ₂)/n).
    pub se: f64,
    pub bins: Vec<BinCheck>,
}

impl LatentScoreReport {
    /// |p̂ − μ₂| in units of the binomial standard error.
    pub fn marginal_z(&self) -> f64 {
        (self.p_hat - self.mu2).abs() / self.se
    }

    pub fn marginal_ok(&self, k: f64) -> bool {
        self.marginal_z() <= k
    }

    pub fn conditional_ok(&self, k: f64) -> bool {
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .all(|b| b.within(k))
    }

    pub fn worst_bin_z(&self) -> f64 {
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(BinCheck::z)
            .fold(0.0, f64::max)
    }
}

/// Draws `n_draws` latent pairs from a ChaCha8 stream seeded with `seed`
/// (z₁ then ξ for each draw) and compares marginal and binned conditional
/// frequencies of z₂ > 0 with μ₂ and C*.
pub fn verify_latent_score(
    mu2: f64,
    rho: f64,
    n_draws: usize,
    seed: u64,
) -> Result<LatentScoreReport> {
    if n_draws < MIN_DRAWS {
        return Err(Error::Parameter(format!(
            "need at least {MIN_DRAWS} draws, got {n_draws}"
        )));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::Parameter(format!(
            "rho must lie in (-1,1), got {rho}"
        )));
    }
    let a = normal_quantile(mu2)?;
    let s = (1.0 - rho * rho).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 2.0 * BIN_RANGE / BINS as f64;
    let mut count = [0usize; BINS];
    let mut hits = [0usize; BINS];
    let mut z_sum = [0.0f64; BINS];
    let mut c_sum = [0.0f64; BINS];
    let mut positive = 0usize;
    for _ in 0..n_draws {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let xi: f64 = StandardNormal.sample(&mut rng);
        let z2 = a + rho * z1 + s * xi;
        let up = z2 > 0.0;
        positive += usize::from(up);
        if z1.abs() < BIN_RANGE {
            let b = (((z1 + BIN_RANGE) / width) as usize).min(BINS - 1);
            count[b] += 1;
            hits[b] += usize::from(up);
            z_sum[b] += z1;
            c_sum[b] += cstar(mu2, z1, rho);
        }
    }
    let bins = (0..BINS)
        .map(|b| {
            let lo = -BIN_RANGE + width * b as f64;
            let k = count[b];
            if k == 0 {
                return BinCheck {
                    lo,
                    hi: lo + width,
                    count: 0,
                    center: lo + 0.5 * width,
                    empirical: f64::NAN,
                    expected: f64::NAN,
                    at_center: f64::NAN,
                    se: f64::NAN,
                };
            }
            let kf = k as f64;
            let center = z_sum[b] / kf;
            let expected = c_sum[b] / kf;
            BinCheck {
                lo,
                hi: lo + width,
                count: k,
                center,
                empirical: hits[b] as f64 / kf,
                expected,
                at_center: cstar(mu2, center, rho),
                se: (expected * (1.0 - expected) / kf).sqrt(),
            }
        })
        .collect();
    Ok(LatentScoreReport {
        mu2,
        rho,
        n_draws,
        p_hat: positive as f64 / n_draws as f64,
        se: (mu2 * (1.0 - mu2) / n_draws as f64).sqrt(),
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_case() {
        let r = verify_latent_score(0.5, 0.0, 40_000, 11).unwrap();
        assert!(r.marginal_ok(3.0), "z = {}", r.marginal_z());
        assert_eq!(r.bins.len(), BINS);
    }

    #[test]
    fn rejects_small_runs() {
        assert!(verify_latent_score(0.5, 0.0, 100, 1).is_err());
        assert!(verify_latent_score(0.5, 1.0, 20_000, 1).is_err());
        assert!(verify_latent_score(0.0, 0.2, 20_000, 1).is_err());
    }

    #[test]
    fn deterministic() {
        let a = verify_latent_score(0.3, 0.4, 10_000, 5).unwrap();
        let b = verify_latent_score(0.3, 0.4, 10_000, 5).unwrap();
        assert_eq!(a.p_hat, b.p_hat);
    }
}
