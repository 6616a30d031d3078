//! Gaussian-kernel smoothed CDF and density of centered residuals.

use log::warn;

use super::CDF_CLAMP;
use crate::error::{Error, Result};
use crate::linalg::sample_sd;
use crate::scalar::Scalar;
use crate::special::{normal_cdf, normal_pdf, normal_quantile_clamped};

/// Kernel terms with |u| beyond this contribute below 1e-17 to F̃.
const CDF_WINDOW: f64 = 8.5;
/// exp(-40) ≈ 4e-18: relative cut-off for the density sum.
const PDF_LOG_CUTOFF: f64 = 80.0;
/// Floor for f̃ before taking logs.
pub const PDF_FLOOR: f64 = 1e-300;

/// Silverman's rule of thumb 1.06 · sd · n^{-1/5}.
pub fn silverman_bandwidth<T: Scalar>(x: &[T]) -> Result<T> {
    if x.len() < 2 {
        return Err(Error::Degenerate(
            "bandwidth needs at least two residuals".into(),
        ));
    }
    let sd = sample_sd(x);
    if !(sd > T::zero()) {
        return Err(Error::Degenerate("constant residual column".into()));
    }
    Ok(T::lit(1.06) * sd * T::from_usize_lossy(x.len()).powf(T::lit(-0.2)))
}

/// Smoothed empirical CDF F̃(t) = n⁻¹ Σ Φ((t−ẽᵢ)/ψ) and density
/// f̃(t) = (nψ)⁻¹ Σ φ((t−ẽᵢ)/ψ) of mean-centered residuals ẽ.
///
/// Residuals are kept sorted so that each evaluation only visits the kernel
/// terms that are numerically nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedResidualCdf<T> {
    residuals: Vec<T>,
    bandwidth: T,
    offset: T,
}

impl<T: Scalar> SmoothedResidualCdf<T> {
    /// Centers `residuals` and uses Silverman's bandwidth.
    pub fn new(residuals: &[T]) -> Result<Self> {
        let bw = silverman_bandwidth(residuals)?;
        Self::with_bandwidth(residuals, bw)
    }

    pub fn with_bandwidth(residuals: &[T], bandwidth: T) -> Result<Self> {
        if residuals.is_empty() {
            return Err(Error::Degenerate("no residuals".into()));
        }
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::Parameter(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if residuals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("residuals contain NaN or infinity".into()));
        }
        let n = T::from_usize_lossy(residuals.len());
        let mean = residuals.iter().copied().sum::<T>() / n;
        let mut centered: Vec<T> = residuals.iter().map(|&r| r - mean).collect();
        // second pass removes the rounding left by the first
        let drift = centered.iter().copied().sum::<T>() / n;
        for c in &mut centered {
            *c -= drift;
        }
        centered.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
        Ok(Self {
            residuals: centered,
            bandwidth,
            offset: mean + drift,
        })
    }

    /// Centered residuals in ascending order.
    pub fn residuals(&self) -> &[T] {
        &self.residuals
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    /// Mean subtracted from the raw residuals.
    pub fn offset(&self) -> T {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    fn n(&self) -> T {
        T::from_usize_lossy(self.residuals.len())
    }

    fn range(&self, lo: T, hi: T) -> (usize, usize) {
        let a = self.residuals.partition_point(|&e| e < lo);
        let b = self.residuals.partition_point(|&e| e <= hi);
        (a, b.max(a))
    }

    /// F̃(t).
    pub fn cdf(&self, t: T) -> T {
        let w = T::lit(CDF_WINDOW) * self.bandwidth;
        let (a, b) = self.range(t - w, t + w);
        let mut s = T::from_usize_lossy(a);
        for &e in &self.residuals[a..b] {
            s += normal_cdf((t - e) / self.bandwidth);
        }
        (s / self.n()).min(T::one())
    }

    /// 1 − F̃(t), summed directly so the upper tail keeps its precision.
    pub fn sf(&self, t: T) -> T {
        let w = T::lit(CDF_WINDOW) * self.bandwidth;
        let (a, b) = self.range(t - w, t + w);
        let mut s = T::from_usize_lossy(self.residuals.len() - b);
        for &e in &self.residuals[a..b] {
            s += normal_cdf((e - t) / self.bandwidth);
        }
        (s / self.n()).min(T::one())
    }

    /// Smallest |t − ẽᵢ| / ψ.
    fn nearest(&self, t: T) -> T {
        let k = self.residuals.partition_point(|&e| e < t);
        let mut d = T::infinity();
        if k < self.residuals.len() {
            d = d.min(self.residuals[k] - t);
        }
        if k > 0 {
            d = d.min(t - self.residuals[k - 1]);
        }
        d / self.bandwidth
    }

    /// Returns (log Σ exp(−(uᵢ² − d²)/2), Σ uᵢ wᵢ / Σ wᵢ, d) over the
    /// contributing kernel terms, uᵢ = (t − ẽᵢ)/ψ and d the nearest |uᵢ|.
    fn kernel_sums(&self, t: T) -> (T, T, T) {
        let d = self.nearest(t);
        let c = (d * d + T::lit(PDF_LOG_CUTOFF)).sqrt() * self.bandwidth;
        let (a, b) = self.range(t - c, t + c);
        let half = T::lit(0.5);
        let mut sw = T::zero();
        let mut suw = T::zero();
        for &e in &self.residuals[a..b] {
            let u = (t - e) / self.bandwidth;
            let wgt = (-(u * u - d * d) * half).exp();
            sw += wgt;
            suw += u * wgt;
        }
        (sw.ln(), suw / sw, d)
    }

    /// log f̃(t), computed without underflow.
    pub fn log_pdf_exact(&self, t: T) -> T {
        let (ls, _, d) = self.kernel_sums(t);
        let norm = (self.n() * self.bandwidth * T::lit(std::f64::consts::TAU).sqrt()).ln();
        ls - T::lit(0.5) * d * d - norm
    }

    /// f̃(t).
    pub fn pdf(&self, t: T) -> T {
        self.log_pdf_exact(t).exp()
    }

    /// f̃′(t).
    pub fn pdf_derivative(&self, t: T) -> T {
        self.pdf(t) * self.score(t)
    }

    /// f̃′(t) / f̃(t).
    pub fn score(&self, t: T) -> T {
        let (_, mean_u, _) = self.kernel_sums(t);
        -mean_u / self.bandwidth
    }

    /// (F̃(t), f̃(t)).
    pub fn cdf_pdf(&self, t: T) -> (T, T) {
        (self.cdf(t), self.pdf(t))
    }

    /// log max(f̃(t), 1e-300) and its derivative in t (zero once floored).
    pub fn log_pdf(&self, t: T) -> (T, T) {
        let lp = self.log_pdf_exact(t);
        let floor = T::lit(PDF_FLOOR).ln();
        if lp < floor {
            warn!("smoothed density underflow at t = {t}; clamped to {PDF_FLOOR:e}");
            (floor, T::zero())
        } else {
            (lp, self.score(t))
        }
    }

    /// Gaussian score q = Φ⁻¹(F̃(t)) with F̃ clamped into [1e-12, 1−1e-12]
    /// (upper half via −Φ⁻¹(1 − F̃)),
    /// and dq/dt = f̃(t)/φ(q) (zero when clamped).
    pub fn gaussian_score(&self, t: T) -> (T, T) {
        let eps = T::lit(CDF_CLAMP);
        let f = self.cdf(t);
        let (q, inside) = if f > T::lit(0.5) {
            let s = self.sf(t);
            (-normal_quantile_clamped(s, eps), s > eps)
        } else {
            (normal_quantile_clamped(f, eps), f > eps)
        };
        if !inside {
            return (q, T::zero());
        }
        let lq = normal_pdf(q).ln();
        (q, (self.log_pdf_exact(t) - lq).exp())
    }

    /// F̃ at many points. Large requests go through a cubic Hermite table of
    /// F̃ (with f̃ as slope) on a uniform grid, accurate to about 1e-12.
    pub fn cdf_many(&self, ts: &[T]) -> Vec<T> {
        let work = ts.len().saturating_mul(self.residuals.len());
        if work <= TABLE_WORK_THRESHOLD {
            return ts.iter().map(|&t| self.cdf(t)).collect();
        }
        let table = CdfTable::build(self, TABLE_NODES);
        ts.iter().map(|&t| table.eval(t)).collect()
    }

    /// Gaussian scores Φ⁻¹(F̃(t)) (clamped) for many points.
    pub fn gaussian_scores(&self, ts: &[T]) -> Vec<T> {
        let eps = T::lit(CDF_CLAMP);
        if ts.len().saturating_mul(self.residuals.len()) <= TABLE_WORK_THRESHOLD {
            return ts.iter().map(|&t| self.gaussian_score(t).0).collect();
        }
        self.cdf_many(ts)
            .into_iter()
            .map(|f| normal_quantile_clamped(f, eps))
            .collect()
    }
}

const TABLE_WORK_THRESHOLD: usize = 20_000_000;
const TABLE_NODES: usize = 16_384;

struct CdfTable<T> {
    lo: T,
    step: T,
    values: Vec<T>,
    slopes: Vec<T>,
}

impl<T: Scalar> CdfTable<T> {
    fn build(cdf: &SmoothedResidualCdf<T>, nodes: usize) -> Self {
        let res = cdf.residuals();
        let pad = T::lit(CDF_WINDOW) * cdf.bandwidth();
        let lo = res[0] - pad;
        let hi = res[res.len() - 1] + pad;
        let step = (hi - lo) / T::from_usize_lossy(nodes - 1);
        let n = cdf.n();
        let bw = cdf.bandwidth();
        let mut values = Vec::with_capacity(nodes);
        let mut slopes = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let t = lo + step * T::from_usize_lossy(k);
            let (a, b) = cdf.range(t - pad, t + pad);
            let mut s = T::from_usize_lossy(a);
            let mut d = T::zero();
            for &e in &res[a..b] {
                let u = (t - e) / bw;
                s += normal_cdf(u);
                d += normal_pdf(u);
            }
            values.push((s / n).min(T::one()));
            slopes.push(d / (n * bw));
        }
        Self {
            lo,
            step,
            values,
            slopes,
        }
    }

    fn eval(&self, t: T) -> T {
        let x = (t - self.lo) / self.step;
        if x <= T::zero() {
            return T::zero();
        }
        let last = self.values.len() - 1;
        if x >= T::from_usize_lossy(last) {
            return T::one();
        }
        let k = x.floor().to_usize().unwrap_or(0).min(last - 1);
        let s = x - T::from_usize_lossy(k);
        let (s2, s3) = (s * s, s * s * s);
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        let v = h00 * self.values[k]
            + h10 * self.step * self.slopes[k]
            + h01 * self.values[k + 1]
            + h11 * self.step * self.slopes[k + 1];
        v.max(T::zero()).min(T::one())
    }
}
