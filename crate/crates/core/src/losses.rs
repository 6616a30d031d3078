//! Training objectives with exact gradients with respect to the head outputs.
//!
//! Every loss returns a [`LossValue`] holding the scalar, the per-sample
//! contributions (which sum to the scalar) and one gradient buffer per
//! differentiable argument. [`attach`] records a loss on a [`Tape`] so that
//! backpropagation continues into the backbone.
//!
//! Conventions follow the likelihoods as written: `mse_loss` is a mean, the
//! cross entropy and the three copula losses are sums over samples. Use
//! [`LossValue::scaled`] to divide by the batch size.

use log::warn;

use crate::copula::{
    clamp_probability, cstar_terms, RcCopulaParams, RrGaussianParams, SmoothedResidualCdf,
    CDF_CLAMP,
};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::nn::{NodeId, Tape};
use crate::scalar::Scalar;
use crate::special::{inverse_mills, log_normal_cdf};

/// ln(2π).
const LN_TAU: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub scalar: T,
    /// Per-sample contributions; they sum to `scalar`.
    pub per_sample: Option<Vec<T>>,
    /// `grads[k][i]` = ∂scalar / ∂(k-th differentiable argument)[i].
    pub grads: Vec<Vec<T>>,
}

impl<T: Scalar> LossValue<T> {
    fn from_terms(terms: Vec<T>, grads: Vec<Vec<T>>) -> Result<Self> {
        if let Some(i) = terms.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!(
                "loss term of sample {i} is {}",
                terms[i]
            )));
        }
        for g in &grads {
            if let Some(i) = g.iter().position(|t| !t.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "loss gradient at entry {i} is {}",
                    g[i]
                )));
            }
        }
        Ok(Self {
            scalar: terms.iter().copied().sum(),
            per_sample: Some(terms),
            grads,
        })
    }

    /// Multiplies the value, the per-sample terms and the gradients by `factor`.
    pub fn scaled(mut self, factor: T) -> Self {
        self.scalar *= factor;
        if let Some(p) = &mut self.per_sample {
            p.iter_mut().for_each(|v| *v *= factor);
        }
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v *= factor);
        }
        self
    }
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Dimension(format!("{what}: empty input")));
    }
    if a != b {
        return Err(Error::Dimension(format!(
            "{what}: lengths {a} and {b} differ"
        )));
    }
    Ok(())
}

/// Mean squared error n⁻¹ Σ (pᵢ − tᵢ)². Gradient with respect to `preds`.
pub fn mse_loss<T: Scalar>(preds: &[T], targets: &[T]) -> Result<LossValue<T>> {
    check_len("mse_loss", preds.len(), targets.len())?;
    let n = T::from_usize_lossy(preds.len());
    let two = T::lit(2.0);
    let mut terms = Vec::with_capacity(preds.len());
    let mut grad = Vec::with_capacity(preds.len());
    for (&p, &t) in preds.iter().zip(targets) {
        let r = p - t;
        terms.push(r * r / n);
        grad.push(two * r / n);
    }
    LossValue::from_terms(terms, vec![grad])
}

/// Summed binary cross entropy −Σ [y ln p + (1−y) ln(1−p)]. Probabilities
/// outside [1e-12, 1−1e-12] are clamped (with a warning) and receive zero
/// gradient. Gradient with respect to `probs`.
pub fn cross_entropy_loss<T: Scalar>(probs: &[T], labels: &[T]) -> Result<LossValue<T>> {
    check_len("cross_entropy_loss", probs.len(), labels.len())?;
    let eps = T::lit(CDF_CLAMP);
    let mut clamped = 0usize;
    let mut terms = Vec::with_capacity(probs.len());
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let q = clamp_probability(p);
        let inside = p >= eps && p <= T::one() - eps;
        clamped += usize::from(!inside);
        terms.push(-(y * q.ln() + (T::one() - y) * (-q).ln_1p()));
        grad.push(if inside {
            -y / q + (T::one() - y) / (T::one() - q)
        } else {
            T::zero()
        });
    }
    if clamped > 0 {
        warn!("cross_entropy_loss: {clamped} probabilities clamped into [{eps}, 1-{eps}]");
    }
    LossValue::from_terms(terms, vec![grad])
}

/// R-C copula loss
/// (2σ²)⁻¹ Σ (y₁−μ₁)² − Σ [y₂ ln C* + (1−y₂) ln(1−C*)], z₁ = (y₁−μ₁)/σ.
/// Gradients with respect to `mu1` and `mu2` (in that order).
pub fn copula_rc_loss<T: Scalar>(
    y1: &[T],
    y2: &[T],
    mu1: &[T],
    mu2: &[T],
    params: &RcCopulaParams<T>,
) -> Result<LossValue<T>> {
    let n = y1.len();
    check_len("copula_rc_loss", n, y2.len())?;
    check_len("copula_rc_loss", n, mu1.len())?;
    check_len("copula_rc_loss", n, mu2.len())?;
    let RcCopulaParams { rho, sigma } = *params;
    let half = T::lit(0.5);
    let var = sigma * sigma;
    let mut terms = Vec::with_capacity(n);
    let mut g1 = Vec::with_capacity(n);
    let mut g2 = Vec::with_capacity(n);
    for i in 0..n {
        let r = y1[i] - mu1[i];
        let z1 = r / sigma;
        let c = cstar_terms(mu2[i], z1, rho);
        let y = y2[i];
        let ny = T::one() - y;
        // ln C* = ln Φ(u), ln(1−C*) = ln Φ(−u)
        let term = half * r * r / var - y * log_normal_cdf(c.u) - ny * log_normal_cdf(-c.u);
        let dterm_du = -y * inverse_mills(c.u) + ny * inverse_mills(-c.u);
        if !term.is_finite() || !dterm_du.is_finite() {
            return Err(Error::NonFinite(format!(
                "copula_rc_loss: sample {i} produced {term}"
            )));
        }
        terms.push(term);
        g1.push(-r / var - dterm_du * c.du_dz1 / sigma);
        g2.push(dterm_du * c.du_dmu2);
    }
    LossValue::from_terms(terms, vec![g1, g2])
}

fn check_matrices<T: Scalar>(what: &str, y: &Matrix<T>, preds: &Matrix<T>, p: usize) -> Result<()> {
    if y.rows() == 0 {
        return Err(Error::Dimension(format!("{what}: empty input")));
    }
    if y.rows() != preds.rows() || y.cols() != preds.cols() {
        return Err(Error::Dimension(format!(
            "{what}: responses {}x{} vs predictions {}x{}",
            y.rows(),
            y.cols(),
            preds.rows(),
            preds.cols()
        )));
    }
    if y.cols() != p {
        return Err(Error::Dimension(format!(
            "{what}: {} responses for p = {p}",
            y.cols()
        )));
    }
    Ok(())
}

/// Gaussian-error copula loss −Σᵢ ln MVN(yᵢ − predᵢ; 0, Σ). Gradient with
/// respect to `preds`, row-major like `preds`.
pub fn copula_rr_gaussian_loss<T: Scalar>(
    y: &Matrix<T>,
    preds: &Matrix<T>,
    params: &RrGaussianParams<T>,
) -> Result<LossValue<T>> {
    let p = params.p();
    check_matrices("copula_rr_gaussian_loss", y, preds, p)?;
    let chol = Cholesky::new(params.sigma_mat())?;
    let half = T::lit(0.5);
    let constant = half * (chol.log_det() + T::from_usize_lossy(p) * T::lit(LN_TAU));
    let mut terms = Vec::with_capacity(y.rows());
    let mut grad = Vec::with_capacity(y.rows() * p);
    let mut r = vec![T::zero(); p];
    for i in 0..y.rows() {
        for j in 0..p {
            r[j] = y[(i, j)] - preds[(i, j)];
        }
        let s = chol.solve(&r);
        let quad: T = r.iter().zip(&s).map(|(&a, &b)| a * b).sum();
        terms.push(half * quad + constant);
        grad.extend(s.iter().map(|&v| -v));
    }
    LossValue::from_terms(terms, vec![grad])
}

/// Nonparametric copula loss
/// −Σᵢ ½ qᵢᵀ(I − Γ⁻¹)qᵢ − Σᵢ Σⱼ ln f̃ⱼ(yᵢⱼ − predᵢⱼ), qᵢⱼ = Φ⁻¹(F̃ⱼ(yᵢⱼ − predᵢⱼ)).
/// Gradient with respect to `preds`, row-major like `preds`.
pub fn copula_rr_nonparam_loss<T: Scalar>(
    y: &Matrix<T>,
    preds: &Matrix<T>,
    gamma: &Matrix<T>,
    cdfs: &[SmoothedResidualCdf<T>],
) -> Result<LossValue<T>> {
    let p = cdfs.len();
    check_matrices("copula_rr_nonparam_loss", y, preds, p)?;
    if gamma.rows() != p || gamma.cols() != p {
        return Err(Error::Dimension(format!(
            "copula_rr_nonparam_loss: Γ is {}x{} for p = {p}",
            gamma.rows(),
            gamma.cols()
        )));
    }
    let gamma_inv = Cholesky::new(gamma)?.inverse();
    let mut a = Matrix::identity(p);
    for s in 0..p {
        for j in 0..p {
            a[(s, j)] -= gamma_inv[(s, j)];
        }
    }
    let half = T::lit(0.5);
    let mut terms = Vec::with_capacity(y.rows());
    let mut grad = Vec::with_capacity(y.rows() * p);
    let mut q = vec![T::zero(); p];
    let mut dq = vec![T::zero(); p];
    let mut score = vec![T::zero(); p];
    for i in 0..y.rows() {
        let mut log_f = T::zero();
        for j in 0..p {
            let r = y[(i, j)] - preds[(i, j)];
            (q[j], dq[j]) = cdfs[j].gaussian_score(r);
            let (lf, sc) = cdfs[j].log_pdf(r);
            log_f += lf;
            score[j] = sc;
        }
        let aq = a.matvec(&q)?;
        let quad: T = q.iter().zip(&aq).map(|(&u, &v)| u * v).sum();
        terms.push(-half * quad - log_f);
        // ∂term/∂r = −(Aq)ⱼ dqⱼ/dr − f̃′/f̃, and ∂r/∂pred = −1
        for j in 0..p {
            grad.push(aq[j] * dq[j] + score[j]);
        }
    }
    LossValue::from_terms(terms, vec![grad])
}

/// Interleaves per-head columns into the row-major `[N, P]` layout of the
/// backbone outputs.
pub fn interleave<T: Scalar>(columns: &[Vec<T>]) -> Vec<T> {
    let n = columns.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(n * columns.len());
    for i in 0..n {
        for c in columns {
            out.push(c[i]);
        }
    }
    out
}

/// Records `loss` on `tape` as a scalar depending on `outputs`, whose
/// gradient (row-major, same size as the node) is `grad`.
pub fn attach<T: Scalar>(
    tape: &mut Tape<T>,
    outputs: NodeId,
    loss: &LossValue<T>,
    grad: Vec<T>,
) -> Result<NodeId> {
    tape.external_scalar(&[outputs], loss.scalar, vec![grad])
}
