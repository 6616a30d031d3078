//! Least-squares efficiency oracle for the last fully connected layer.
//!
//! The two regression heads on a fixed feature map D are a seemingly
//! unrelated regression: yᵢⱼ = wⱼᵀDᵢ + bⱼ + εᵢⱼ with (εᵢ₁, εᵢ₂) ~ MVN(0, Σ).
//! Per-equation least squares (OLS) is what the empirical loss fits; the
//! Gaussian copula loss with known Σ is generalized least squares (GLS) on the
//! stacked system with covariance Σ ⊗ I; FGLS plugs in Σ estimated from the
//! OLS residuals. Each equation regresses on an intercept and the columns in
//! its own support.

use std::thread;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::copula::estimate_rr_gaussian_params;
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overlap {
    /// Supports share no feature.
    Disjoint,
    /// Supports share exactly one feature (outside the theorem's setting).
    Partial,
}

impl std::str::FromStr for Overlap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "disjoint" => Ok(Overlap::Disjoint),
            "partial" => Ok(Overlap::Partial),
            other => Err(Error::Config(format!(
                "unknown overlap {other:?} (expected disjoint or partial)"
            ))),
        }
    }
}

/// Shape and noise of a SUR design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurDesign {
    pub n: usize,
    pub k: usize,
    pub support_size: usize,
    pub overlap: Overlap,
    pub rho: f64,
    pub sigmas: [f64; 2],
}

impl SurDesign {
    pub fn new(n: usize, k: usize, overlap: Overlap, rho: f64, sigmas: [f64; 2]) -> Self {
        Self {
            n,
            k,
            support_size: 3.min(k / 2),
            overlap,
            rho,
            sigmas,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k < 4 {
            return Err(Error::Parameter(format!(
                "need K >= 4 features, got {}",
                self.k
            )));
        }
        let s = self.support_size;
        let needed = match self.overlap {
            Overlap::Disjoint => 2 * s,
            Overlap::Partial => (2 * s).saturating_sub(1),
        };
        if s == 0 || (self.overlap == Overlap::Partial && s < 2) || needed > self.k {
            return Err(Error::Parameter(format!(
                "support size {s} does not fit the {:?} regime with K = {}",
                self.overlap, self.k
            )));
        }
        if self.n <= self.k {
            return Err(Error::Parameter(format!(
                "need n > K, got n = {} and K = {}",
                self.n, self.k
            )));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Parameter(format!(
                "rho must lie in (-1,1), got {}",
                self.rho
            )));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Parameter(format!(
                "error scales must be positive, got {:?}",
                self.sigmas
            )));
        }
        Ok(())
    }

    pub fn covariance(&self) -> Matrix<f64> {
        let [a, b] = self.sigmas;
        let c = self.rho * a * b;
        Matrix::from_rows(&[vec![a * a, c], vec![c, b * b]]).expect("2x2 rows")
    }
}

/// True coefficients of a SUR design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurTruth {
    /// Sorted support of each equation.
    pub supports: [Vec<usize>; 2],
    /// Full-length weights, zero off the support.
    pub weights: [Vec<f64>; 2],
    pub biases: [f64; 2],
}

fn draw_truth(design: &SurDesign, rng: &mut ChaCha8Rng) -> SurTruth {
    let s = design.support_size;
    let mut perm: Vec<usize> = (0..design.k).collect();
    perm.shuffle(rng);
    let mut first = perm[..s].to_vec();
    let mut second = match design.overlap {
        Overlap::Disjoint => perm[s..2 * s].to_vec(),
        Overlap::Partial => {
            let mut v = vec![perm[s - 1]];
            v.extend_from_slice(&perm[s..2 * s - 1]);
            v
        }
    };
    first.sort_unstable();
    second.sort_unstable();
    let mut weights = [vec![0.0; design.k], vec![0.0; design.k]];
    for (j, support) in [&first, &second].into_iter().enumerate() {
        for &c in support {
            let magnitude = rng.random_range(0.5..1.5);
            weights[j][c] = if rng.random::<bool>() {
                magnitude
            } else {
                -magnitude
            };
        }
    }
    let biases = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
    SurTruth {
        supports: [first, second],
        weights,
        biases,
    }
}

/// One realized SUR data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SurInstance {
    pub design: SurDesign,
    pub truth: SurTruth,
    /// n×K feature matrix with i.i.d. N(0,1) entries.
    pub d: Matrix<f64>,
    /// n×2 responses.
    pub y: Matrix<f64>,
}

fn draw_features(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let data = (0..n * k).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(n, k, data).expect("n x k")
}

fn draw_errors(n: usize, chol: &Cholesky<f64>, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let z = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
            let e = chol.lower_mul(&z);
            [e[0], e[1]]
        })
        .collect()
}

fn responses(d: &Matrix<f64>, truth: &SurTruth, errors: &[[f64; 2]]) -> Matrix<f64> {
    let n = d.rows();
    let mut y = Matrix::zeros(n, 2);
    for i in 0..n {
        for j in 0..2 {
            let mean: f64 = truth.supports[j]
                .iter()
                .map(|&c| truth.weights[j][c] * d[(i, c)])
                .sum();
            y[(i, j)] = mean + truth.biases[j] + errors[i][j];
        }
    }
    y
}

/// Draws supports, weights, D and errors from one ChaCha8 stream seeded
/// with `seed`.
pub fn gen_sur_instance(design: &SurDesign, seed: u64) -> Result<SurInstance> {
    design.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = draw_truth(design, &mut rng);
    let chol = Cholesky::new(&design.covariance())?;
    let d = draw_features(design.n, design.k, &mut rng);
    let errors = draw_errors(design.n, &chol, &mut rng);
    let y = responses(&d, &truth, &errors);
    Ok(SurInstance {
        design: design.clone(),
        truth,
        d,
        y,
    })
}

/// Estimated coefficients, full length K (zero off the support).
#[derive(Debug, Clone, PartialEq)]
pub struct SurEstimate {
    pub weights: [Vec<f64>; 2],
    pub biases: [f64; 2],
}

/// Cross products of the per-equation design matrices [1, D_support].
struct Design {
    x: [Matrix<f64>; 2],
    /// X_a' X_b for a, b ∈ {0, 1}.
    gram: [[Matrix<f64>; 2]; 2],
    ols: [Cholesky<f64>; 2],
}

impl Design {
    fn new(d: &Matrix<f64>, supports: &[Vec<usize>; 2]) -> Result<Self> {
        let n = d.rows();
        let build = |support: &[usize]| {
            let mut m = Matrix::zeros(n, support.len() + 1);
            for i in 0..n {
                m[(i, 0)] = 1.0;
                for (c, &col) in support.iter().enumerate() {
                    m[(i, c + 1)] = d[(i, col)];
                }
            }
            m
        };
        let x = [build(&supports[0]), build(&supports[1])];
        let cross = |a: &Matrix<f64>, b: &Matrix<f64>| a.transpose().matmul(b).expect("conforming");
        let gram = [
            [cross(&x[0], &x[0]), cross(&x[0], &x[1])],
            [cross(&x[1], &x[0]), cross(&x[1], &x[1])],
        ];
        let chol = |g: &Matrix<f64>| {
            Cholesky::new(g)
                .map_err(|_| Error::Degenerate("feature columns are rank deficient".into()))
        };
        let ols = [chol(&gram[0][0])?, chol(&gram[1][1])?];
        Ok(Self { x, gram, ols })
    }

    fn xty(&self, y: &Matrix<f64>) -> [[Vec<f64>; 2]; 2] {
        let col = |b: usize| y.column(b);
        let y0 = col(0);
        let y1 = col(1);
        let f = |a: usize, v: &[f64]| self.x[a].transpose().matvec(v).expect("conforming");
        [[f(0, &y0), f(0, &y1)], [f(1, &y0), f(1, &y1)]]
    }

    fn ols(&self, xty: &[[Vec<f64>; 2]; 2]) -> [Vec<f64>; 2] {
        [self.ols[0].solve(&xty[0][0]), self.ols[1].solve(&xty[1][1])]
    }

    fn gls(&self, xty: &[[Vec<f64>; 2]; 2], sigma: &Matrix<f64>) -> Result<[Vec<f64>; 2]> {
        let inv = Cholesky::new(sigma)?.inverse();
        let p = [self.x[0].cols(), self.x[1].cols()];
        let m = p[0] + p[1];
        let mut a = Matrix::zeros(m, m);
        let mut rhs = vec![0.0; m];
        let off = [0, p[0]];
        for ea in 0..2 {
            for eb in 0..2 {
                let g = &self.gram[ea][eb];
                for r in 0..p[ea] {
                    for c in 0..p[eb] {
                        a[(off[ea] + r, off[eb] + c)] = inv[(ea, eb)] * g[(r, c)];
                    }
                    rhs[off[ea] + r] += inv[(ea, eb)] * xty[ea][eb][r];
                }
            }
        }
        let beta = Cholesky::new(&a)
            .map_err(|_| Error::Degenerate("stacked GLS system is singular".into()))?
            .solve(&rhs);
        Ok([beta[..p[0]].to_vec(), beta[p[0]..].to_vec()])
    }

    fn residuals(&self, y: &Matrix<f64>, beta: &[Vec<f64>; 2]) -> Matrix<f64> {
        let n = y.rows();
        let fit = [
            self.x[0].matvec(&beta[0]).expect("conforming"),
            self.x[1].matvec(&beta[1]).expect("conforming"),
        ];
        let mut r = Matrix::zeros(n, 2);
        for i in 0..n {
            for j in 0..2 {
                r[(i, j)] = y[(i, j)] - fit[j][i];
            }
        }
        r
    }

    /// Analytic conditional variances of the support weights:
    /// OLS σⱼ²[(XⱼᵀXⱼ)⁻¹]_cc and GLS [(Xᵀ(Σ⁻¹⊗I)X)⁻¹]_cc (intercepts excluded).
    fn analytic_variances(&self, sigma: &Matrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut ols = Vec::new();
        for j in 0..2 {
            let inv = self.ols[j].inverse();
            for c in 1..self.x[j].cols() {
                ols.push(sigma[(j, j)] * inv[(c, c)]);
            }
        }
        let sinv = Cholesky::new(sigma)?.inverse();
        let p = [self.x[0].cols(), self.x[1].cols()];
        let m = p[0] + p[1];
        let mut a = Matrix::zeros(m, m);
        let off = [0, p[0]];
        for ea in 0..2 {
            for eb in 0..2 {
                for r in 0..p[ea] {
                    for c in 0..p[eb] {
                        a[(off[ea] + r, off[eb] + c)] = sinv[(ea, eb)] * self.gram[ea][eb][(r, c)];
                    }
                }
            }
        }
        let cov = Cholesky::new(&a)?.inverse();
        let mut gls = Vec::new();
        for j in 0..2 {
            for c in 1..p[j] {
                gls.push(cov[(off[j] + c, off[j] + c)]);
            }
        }
        Ok((ols, gls))
    }
}

fn to_estimate(beta: &[Vec<f64>; 2], supports: &[Vec<usize>; 2], k: usize) -> SurEstimate {
    let mut weights = [vec![0.0; k], vec![0.0; k]];
    for j in 0..2 {
        for (c, &col) in supports[j].iter().enumerate() {
            weights[j][col] = beta[j][c + 1];
        }
    }
    SurEstimate {
        weights,
        biases: [beta[0][0], beta[1][0]],
    }
}

/// Separate least-squares fits per equation.
pub fn ols_fit(inst: &SurInstance) -> Result<SurEstimate> {
    let design = Design::new(&inst.d, &inst.truth.supports)?;
    let beta = design.ols(&design.xty(&inst.y));
    Ok(to_estimate(&beta, &inst.truth.supports, inst.design.k))
}

/// Stacked GLS with error covariance `sigma` (2×2).
pub fn gls_fit(inst: &SurInstance, sigma: &Matrix<f64>) -> Result<SurEstimate> {
    let design = Design::new(&inst.d, &inst.truth.supports)?;
    let beta = design.gls(&design.xty(&inst.y), sigma)?;
    Ok(to_estimate(&beta, &inst.truth.supports, inst.design.k))
}

/// GLS with Σ estimated from the OLS residuals.
pub fn fgls_fit(inst: &SurInstance) -> Result<SurEstimate> {
    let design = Design::new(&inst.d, &inst.truth.supports)?;
    let xty = design.xty(&inst.y);
    let ols = design.ols(&xty);
    let sigma = estimate_rr_gaussian_params(&design.residuals(&inst.y, &ols))?;
    let beta = design.gls(&xty, sigma.sigma_mat())?;
    Ok(to_estimate(&beta, &inst.truth.supports, inst.design.k))
}

/// Settings of [`variance_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: SurDesign,
    /// Independent feature matrices D.
    pub replicates: usize,
    /// Error draws per replicate (M).
    pub draws: usize,
    pub seed: u64,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn new(design: SurDesign, replicates: usize, draws: usize, seed: u64) -> Self {
        Self {
            design,
            replicates,
            draws,
            seed,
            workers: 1,
        }
    }
}

pub const ESTIMATORS: [&str; 3] = ["ols", "gls", "fgls"];
pub const MIN_REPLICATES: usize = 100;
/// Relative slack when comparing variances that coincide up to rounding.
pub const DOMINANCE_TOLERANCE: f64 = 1e-9;

/// Per-replicate Monte-Carlo statistics of one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateStats {
    /// Sample variances (n−1) of the M estimates: ols, gls, fgls.
    pub variance: [f64; 3],
    /// Mean of (estimate − truth) over the M draws.
    pub bias: [f64; 3],
    /// Analytic conditional variances (ols, gls).
    pub analytic: [f64; 2],
}

/// Aggregates over replicates for one weight coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateSummary {
    /// Label `w<j>[<feature>]`, j ∈ {1, 2}.
    pub label: String,
    pub mean_variance: [f64; 3],
    /// Fraction of replicates with Var(GLS) ≤ Var(OLS)·(1 + 1e-9).
    pub dominance: f64,
    /// Same, with the analytic conditional variances.
    pub analytic_dominance: f64,
    /// Mean and standard error of (estimate − truth) over all draws.
    pub bias: [f64; 3],
    pub bias_se: [f64; 3],
}

impl CoordinateSummary {
    /// |bias| ≤ k·SE for every estimator.
    pub fn unbiased_within(&self, k: f64) -> bool {
        (0..3).all(|e| self.bias[e].abs() <= k * self.bias_se[e])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorComparison {
    pub config: ExperimentConfig,
    pub truth: SurTruth,
    pub labels: Vec<String>,
    /// `per_replicate[r][c]`.
    pub per_replicate: Vec<Vec<ReplicateStats>>,
    pub coordinates: Vec<CoordinateSummary>,
    /// Share of (replicate, coordinate) pairs where GLS dominates.
    pub dominance_fraction: f64,
    /// Smallest per-coordinate dominance fraction.
    pub min_coordinate_dominance: f64,
    /// Mean over replicates and coordinates of Var(GLS)/Var(OLS).
    pub mean_variance_ratio: f64,
    /// Mean squared difference between FGLS and GLS estimates.
    pub fgls_gls_msd: f64,
}

struct ReplicateOutput {
    stats: Vec<ReplicateStats>,
    sum_sq_dev: Vec<[f64; 3]>,
    fgls_gls_sq: f64,
}

fn run_replicate(
    cfg: &ExperimentConfig,
    truth: &SurTruth,
    chol: &Cholesky<f64>,
    r: usize,
) -> Result<ReplicateOutput> {
    let design = &cfg.design;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(r as u64 + 1);
    let d = draw_features(design.n, design.k, &mut rng);
    let sur = Design::new(&d, &truth.supports)?;
    let sigma = design.covariance();
    let coords: Vec<(usize, usize)> = (0..2)
        .flat_map(|j| {
            truth.supports[j]
                .iter()
                .enumerate()
                .map(move |(c, _)| (j, c + 1))
        })
        .collect();
    let true_w: Vec<f64> = coords
        .iter()
        .map(|&(j, c)| truth.weights[j][truth.supports[j][c - 1]])
        .collect();
    let m = cfg.draws;
    let mut est = vec![vec![[0.0; 3]; m]; coords.len()];
    let mut fgls_gls_sq = 0.0;
    for draw in 0..m {
        let errors = draw_errors(design.n, chol, &mut rng);
        let y = responses(&d, truth, &errors);
        let xty = sur.xty(&y);
        let ols = sur.ols(&xty);
        let gls = sur.gls(&xty, &sigma)?;
        let sigma_hat = estimate_rr_gaussian_params(&sur.residuals(&y, &ols))?;
        let fgls = sur.gls(&xty, sigma_hat.sigma_mat())?;
        for (ci, &(j, c)) in coords.iter().enumerate() {
            est[ci][draw] = [ols[j][c], gls[j][c], fgls[j][c]];
            fgls_gls_sq += (fgls[j][c] - gls[j][c]).powi(2);
        }
    }
    let (an_ols, an_gls) = sur.analytic_variances(&sigma)?;
    let mf = m as f64;
    let mut stats = Vec::with_capacity(coords.len());
    let mut sum_sq_dev = Vec::with_capacity(coords.len());
    for ci in 0..coords.len() {
        let mut variance = [0.0; 3];
        let mut bias = [0.0; 3];
        let mut ssd = [0.0; 3];
        for e in 0..3 {
            let mean = est[ci].iter().map(|v| v[e]).sum::<f64>() / mf;
            let ss: f64 = est[ci].iter().map(|v| (v[e] - mean).powi(2)).sum();
            variance[e] = ss / (mf - 1.0);
            bias[e] = mean - true_w[ci];
            ssd[e] = est[ci].iter().map(|v| (v[e] - true_w[ci]).powi(2)).sum();
        }
        stats.push(ReplicateStats {
            variance,
            bias,
            analytic: [an_ols[ci], an_gls[ci]],
        });
        sum_sq_dev.push(ssd);
    }
    Ok(ReplicateOutput {
        stats,
        sum_sq_dev,
        fgls_gls_sq: fgls_gls_sq / (mf * coords.len() as f64),
    })
}

/// Monte-Carlo comparison of OLS, GLS and FGLS conditional variances: each
/// replicate fixes one D and redraws the errors `draws` times.
///
/// Streams: supports and weights come from `ChaCha8Rng::seed_from_u64(seed)`
/// (stream 0); replicate r uses stream r + 1 for D and then its error draws.
pub fn variance_experiment(cfg: &ExperimentConfig) -> Result<EstimatorComparison> {
    cfg.design.validate()?;
    if cfg.draws < 2 {
        return Err(Error::Parameter(
            "need at least 2 error draws per replicate".into(),
        ));
    }
    if cfg.replicates == 0 {
        return Err(Error::Parameter("need at least one replicate".into()));
    }
    if cfg.replicates < MIN_REPLICATES {
        log::warn!(
            "{} replicates is below the recommended {MIN_REPLICATES}",
            cfg.replicates
        );
    }
    let truth = draw_truth(&cfg.design, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let chol = Cholesky::new(&cfg.design.covariance())?;
    let workers = cfg.workers.max(1).min(cfg.replicates);
    let mut outputs: Vec<Option<Result<ReplicateOutput>>> =
        (0..cfg.replicates).map(|_| None).collect();
    thread::scope(|scope| {
        let chunks: Vec<_> = outputs
            .chunks_mut(cfg.replicates.div_ceil(workers))
            .enumerate()
            .collect();
        let per = cfg.replicates.div_ceil(workers);
        for (w, chunk) in chunks {
            let truth = &truth;
            let chol = &chol;
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run_replicate(cfg, truth, chol, w * per + i));
                }
            });
        }
    });
    let outputs: Vec<ReplicateOutput> = outputs
        .into_iter()
        .map(|o| o.expect("every replicate ran"))
        .collect::<Result<_>>()?;

    let labels: Vec<String> = (0..2)
        .flat_map(|j| {
            truth.supports[j]
                .iter()
                .map(move |&c| format!("w{}[{c}]", j + 1))
        })
        .collect();
    let rf = cfg.replicates as f64;
    let total_draws = rf * cfg.draws as f64;
    let mut coordinates = Vec::with_capacity(labels.len());
    let mut dominated = 0usize;
    let mut ratio_sum = 0.0;
    for (ci, label) in labels.iter().enumerate() {
        let mut mean_variance = [0.0; 3];
        let mut bias = [0.0; 3];
        let mut ssd = [0.0; 3];
        let mut dom = 0usize;
        let mut an_dom = 0usize;
        for out in &outputs {
            let s = &out.stats[ci];
            for e in 0..3 {
                mean_variance[e] += s.variance[e] / rf;
                bias[e] += s.bias[e] / rf;
                ssd[e] += out.sum_sq_dev[ci][e];
            }
            dom += usize::from(s.variance[1] <= s.variance[0] * (1.0 + DOMINANCE_TOLERANCE));
            an_dom += usize::from(s.analytic[1] <= s.analytic[0] * (1.0 + DOMINANCE_TOLERANCE));
            ratio_sum += s.variance[1] / s.variance[0];
        }
        dominated += dom;
        let bias_se = std::array::from_fn(|e| {
            let var =
                (ssd[e] / total_draws - bias[e] * bias[e]) * total_draws / (total_draws - 1.0);
            (var.max(0.0) / total_draws).sqrt()
        });
        coordinates.push(CoordinateSummary {
            label: label.clone(),
            mean_variance,
            dominance: dom as f64 / rf,
            analytic_dominance: an_dom as f64 / rf,
            bias,
            bias_se,
        });
    }
    let pairs = (labels.len() * cfg.replicates) as f64;
    Ok(EstimatorComparison {
        config: cfg.clone(),
        truth,
        labels,
        min_coordinate_dominance: coordinates.iter().map(|c| c.dominance).fold(1.0, f64::min),
        dominance_fraction: dominated as f64 / pairs,
        mean_variance_ratio: ratio_sum / pairs,
        fgls_gls_msd: outputs.iter().map(|o| o.fgls_gls_sq).sum::<f64>() / rf,
        per_replicate: outputs.into_iter().map(|o| o.stats).collect(),
        coordinates,
    })
}

impl EstimatorComparison {
    /// Long-format CSV `replicate,coordinate,estimator,variance,bias`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("replicate,coordinate,estimator,variance,bias\n");
        for (r, stats) in self.per_replicate.iter().enumerate() {
            for (label, s) in self.labels.iter().zip(stats) {
                for (e, name) in ESTIMATORS.iter().enumerate() {
                    out.push_str(&format!(
                        "{r},{label},{name},{},{}\n",
                        s.variance[e], s.bias[e]
                    ));
                }
            }
        }
        out
    }

    /// `key=value` summary block.
    pub fn summary(&self) -> String {
        let d = &self.config.design;
        let mut out = format!(
            "n={}\nk={}\nsupport_size={}\noverlap={}\nrho={}\nsigmas={},{}\nreplicates={}\ndraws={}\nseed={}\n",
            d.n,
            d.k,
            d.support_size,
            match d.overlap {
                Overlap::Disjoint => "disjoint",
                Overlap::Partial => "partial",
            },
            d.rho,
            d.sigmas[0],
            d.sigmas[1],
            self.config.replicates,
            self.config.draws,
            self.config.seed
        );
        out.push_str(&format!(
            "dominance_fraction={}\nmin_coordinate_dominance={}\nmean_variance_ratio={}\nfgls_gls_msd={}\n",
            self.dominance_fraction, self.min_coordinate_dominance, self.mean_variance_ratio, self.fgls_gls_msd
        ));
        for c in &self.coordinates {
            out.push_str(&format!(
                "{}: dominance={} analytic_dominance={} var_ols={} var_gls={} var_fgls={}\n",
                c.label,
                c.dominance,
                c.analytic_dominance,
                c.mean_variance[0],
                c.mean_variance[1],
                c.mean_variance[2]
            ));
        }
        out
    }
}
