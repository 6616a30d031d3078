//! Gaussian-copula machinery: the R-C conditional probability C*, copula
//! parameter estimators for both tasks, smoothed residual CDFs and the
//! latent-score Monte-Carlo check.

mod latent;
mod rc;
mod rr;
mod smooth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use latent::{verify_latent_score, BinCheck, LatentScoreReport, BINS, MIN_DRAWS};
pub use rc::{cstar, cstar_terms, estimate_rc_params, CstarTerms, RcCopulaParams};
pub use rr::{
    correlation_matrix, estimate_gamma_nonparam, estimate_rr_gaussian_params, fit_nonparam,
    Bandwidth, RrGaussianParams, RrNonparamParams,
};
pub use smooth::{silverman_bandwidth, SmoothedResidualCdf, PDF_FLOOR};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// CDF values are clamped into [CDF_CLAMP, 1 − CDF_CLAMP] before Φ⁻¹.
pub const CDF_CLAMP: f64 = 1e-12;
/// Correlations are clamped to |ρ| ≤ 1 − RHO_MARGIN.
pub const RHO_MARGIN: f64 = 1e-6;
/// Minimum eigenvalue enforced on estimated correlation matrices.
pub const EIGEN_FLOOR: f64 = 1e-8;

pub fn clamp_probability<T: Scalar>(p: T) -> T {
    let eps = T::lit(CDF_CLAMP);
    p.max(eps).min(T::one() - eps)
}

pub fn clamp_rho<T: Scalar>(rho: T) -> T {
    let m = T::one() - T::lit(RHO_MARGIN);
    rho.max(-m).min(m)
}

/// Which copula loss a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "rc")]
    Rc,
    #[serde(rename = "rr-gaussian")]
    RrGaussian,
    #[serde(rename = "rr-nonparam")]
    RrNonparam,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Rc => "rc",
            Task::RrGaussian => "rr-gaussian",
            Task::RrNonparam => "rr-nonparam",
        }
    }

    pub fn is_regression_regression(self) -> bool {
        !matches!(self, Task::Rc)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rc" => Ok(Task::Rc),
            "rr-gaussian" | "rr_gaussian" | "rr" => Ok(Task::RrGaussian),
            "rr-nonparam" | "rr_nonparam" => Ok(Task::RrNonparam),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (expected rc, rr-gaussian or rr-nonparam)"
            ))),
        }
    }
}

/// Frozen copula parameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub enum CopulaParams<T> {
    Rc(RcCopulaParams<T>),
    RrGaussian(RrGaussianParams<T>),
    RrNonparam(RrNonparamParams<T>),
}

fn join<T: Scalar>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn matrix_text<T: Scalar>(m: &Matrix<T>) -> String {
    (0..m.rows())
        .map(|i| join(m.row(i).iter().copied()))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_list<T: Scalar>(key: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map(T::lit)
                .map_err(|e| Error::Format(format!("{key}: bad number {x:?}: {e}")))
        })
        .collect()
}

impl<T: Scalar> CopulaParams<T> {
    pub fn task(&self) -> Task {
        match self {
            CopulaParams::Rc(_) => Task::Rc,
            CopulaParams::RrGaussian(_) => Task::RrGaussian,
            CopulaParams::RrNonparam(_) => Task::RrNonparam,
        }
    }

    /// Human-readable `key=value` block, one entry per line. Rows of matrices
    /// are separated by `;`, entries by `,`.
    ///
    /// ```text
    /// task=rr-gaussian
    /// p=2
    /// gamma=1,0.7;0.7,1
    /// sigmas=1,2
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = format!("task={}\n", self.task());
        match self {
            CopulaParams::Rc(p) => {
                out.push_str(&format!("rho={}\nsigma={}\n", p.rho, p.sigma));
            }
            CopulaParams::RrGaussian(p) => {
                out.push_str(&format!(
                    "p={}\ngamma={}\nsigmas={}\n",
                    p.p(),
                    matrix_text(p.gamma()),
                    join(p.sigmas().iter().copied())
                ));
            }
            CopulaParams::RrNonparam(p) => {
                out.push_str(&format!(
                    "p={}\ngamma={}\nbandwidths={}\nn_residuals={}\n",
                    p.p(),
                    matrix_text(&p.gamma),
                    join(p.cdfs.iter().map(|c| c.bandwidth())),
                    p.cdfs.first().map_or(0, |c| c.len())
                ));
            }
        }
        out
    }

    /// Parses a block written by [`CopulaParams::to_text`]. The
    /// nonparametric variant cannot be rebuilt because the block does not
    /// carry the residuals.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key=value, got {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("missing key {k:?}")))
        };
        let task: Task = get("task")?.parse()?;
        match task {
            Task::Rc => {
                let rho = parse_list::<T>("rho", get("rho")?)?;
                let sigma = parse_list::<T>("sigma", get("sigma")?)?;
                if rho.len() != 1 || sigma.len() != 1 {
                    return Err(Error::Format("rho and sigma must be scalars".into()));
                }
                Ok(CopulaParams::Rc(RcCopulaParams::new(rho[0], sigma[0])?))
            }
            Task::RrGaussian => {
                let rows: Vec<Vec<T>> = get("gamma")?
                    .split(';')
                    .map(|r| parse_list("gamma", r))
                    .collect::<Result<_>>()?;
                let gamma = Matrix::from_rows(&rows)?;
                let sigmas = parse_list("sigmas", get("sigmas")?)?;
                Ok(CopulaParams::RrGaussian(RrGaussianParams::new(gamma, sigmas)?))
            }
            Task::RrNonparam => Err(Error::Format(
                "nonparametric copula parameters need the training residuals and cannot be parsed from text".into(),
            )),
        }
    }

    /// Off-diagonal (0,1) correlation: ρ for R-C, γ₁₂ for R-R.
    pub fn rho12(&self) -> T {
        match self {
            CopulaParams::Rc(p) => p.rho,
            CopulaParams::RrGaussian(p) if p.p() > 1 => p.gamma()[(0, 1)],
            CopulaParams::RrNonparam(p) if p.p() > 1 => p.gamma[(0, 1)],
            _ => T::zero(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_rc() {
        let p = CopulaParams::Rc(RcCopulaParams::new(0.123_456_789_012_345_f64, 1.5).unwrap());
        let back = CopulaParams::<f64>::from_text(&p.to_text()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn text_round_trip_rr() {
        let g = Matrix::from_rows(&[vec![1.0_f64, 0.7], vec![0.7, 1.0]]).unwrap();
        let p = CopulaParams::RrGaussian(RrGaussianParams::new(g, vec![1.0, 2.0 / 3.0]).unwrap());
        let text = p.to_text();
        assert!(text.contains("task=rr-gaussian"));
        assert_eq!(CopulaParams::<f64>::from_text(&text).unwrap(), p);
    }

    #[test]
    fn text_errors() {
        assert!(CopulaParams::<f64>::from_text("task=rc\nrho=0.2").is_err());
        assert!(CopulaParams::<f64>::from_text("rho=0.2\nsigma=1").is_err());
        assert!(CopulaParams::<f64>::from_text("task=rc\nrho=x\nsigma=1").is_err());
        assert!(CopulaParams::<f64>::from_text("task=rr-nonparam\np=1").is_err());
    }

    #[test]
    fn task_names() {
        for t in [Task::Rc, Task::RrGaussian, Task::RrNonparam] {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
        }
        assert!("bogus".parse::<Task>().is_err());
    }

    #[test]
    fn clamps() {
        assert_eq!(clamp_rho(1.0_f64), 1.0 - RHO_MARGIN);
        assert_eq!(clamp_rho(-2.0_f64), -1.0 + RHO_MARGIN);
        assert_eq!(clamp_probability(0.0_f64), CDF_CLAMP);
        assert_eq!(clamp_probability(0.4_f64), 0.4);
    }
}
