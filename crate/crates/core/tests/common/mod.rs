//! Helpers shared by the integration tests: composed loss evaluation on the
//! simulation backbone and a central finite-difference checker.

#![allow(dead_code)]

use cecnn::copula::{RcCopulaParams, RrGaussianParams, SmoothedResidualCdf};
use cecnn::linalg::Matrix;
use cecnn::losses::{
    attach, copula_rc_loss, copula_rr_gaussian_loss, copula_rr_nonparam_loss, cross_entropy_loss,
    interleave, mse_loss, LossValue,
};
use cecnn::nn::{build_backbone, Backbone, BackboneSpec, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
    CopulaRc,
    CopulaNonparam,
    CopulaGaussian,
}

pub const LOSS_KINDS: [LossKind; 5] = [
    LossKind::Mse,
    LossKind::CrossEntropy,
    LossKind::CopulaRc,
    LossKind::CopulaNonparam,
    LossKind::CopulaGaussian,
];

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mse => "mse",
            Self::CrossEntropy => "cross-entropy",
            Self::CopulaRc => "copula-rc",
            Self::CopulaNonparam => "copula-nonparam",
            Self::CopulaGaussian => "copula-gaussian",
        }
    }

    fn classification(self) -> bool {
        matches!(self, Self::CrossEntropy | Self::CopulaRc)
    }
}

/// A backbone, a batch and everything the loss needs.
pub struct Problem {
    pub kind: LossKind,
    pub backbone: Backbone<f64>,
    pub images: Tensor<f64>,
    pub y: Matrix<f64>,
    rc: RcCopulaParams<f64>,
    gaussian: RrGaussianParams<f64>,
    gamma: Matrix<f64>,
    cdfs: Vec<SmoothedResidualCdf<f64>>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn problem(kind: LossKind, seed: u64, batch: usize) -> Problem {
    let spec = if kind.classification() {
        BackboneSpec::regression_classification()
    } else {
        BackboneSpec::regression_regression()
    };
    let backbone = build_backbone(&spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let pixels: Vec<f64> = (0..batch * 81).map(|_| normal(&mut rng)).collect();
    let images = Tensor::new(&[batch, 1, 9, 9], pixels).unwrap();
    let rows: Vec<Vec<f64>> = (0..batch)
        .map(|_| {
            let y1 = normal(&mut rng);
            let y2 = if kind.classification() {
                f64::from(rng.random_bool(0.5))
            } else {
                2.0 * normal(&mut rng)
            };
            vec![y1, y2]
        })
        .collect();
    let y = Matrix::from_rows(&rows).unwrap();
    let gamma = Matrix::from_rows(&[vec![1.0, 0.7], vec![0.7, 1.0]]).unwrap();
    let cdfs = (0..2)
        .map(|j| {
            let scale = 1.0 + j as f64;
            let res: Vec<f64> = (0..40).map(|_| scale * normal(&mut rng)).collect();
            SmoothedResidualCdf::new(&res).unwrap()
        })
        .collect();
    Problem {
        kind,
        backbone,
        images,
        y,
        rc: RcCopulaParams::new(0.5, 1.2).unwrap(),
        gaussian: RrGaussianParams::new(gamma.clone(), vec![1.0, 2.0]).unwrap(),
        gamma,
        cdfs,
    }
}

impl Problem {
    /// Loss value and its gradient with respect to the `[N, 2]` head outputs.
    fn loss(&self, outputs: &[f64]) -> (f64, Vec<f64>) {
        let n = self.y.rows();
        let col = |j: usize| -> Vec<f64> { (0..n).map(|i| outputs[2 * i + j]).collect() };
        let zeros = vec![0.0; n];
        let (value, grads): (LossValue<f64>, Vec<Vec<f64>>) = match self.kind {
            LossKind::Mse => {
                let a = mse_loss(&col(0), &self.y.column(0)).unwrap();
                let b = mse_loss(&col(1), &self.y.column(1)).unwrap();
                let g = vec![a.grads[0].clone(), b.grads[0].clone()];
                let mut v = a;
                v.scalar += b.scalar;
                (v, g)
            }
            LossKind::CrossEntropy => {
                let v = cross_entropy_loss(&col(1), &self.y.column(1)).unwrap();
                let g = vec![zeros, v.grads[0].clone()];
                (v, g)
            }
            LossKind::CopulaRc => {
                let v = copula_rc_loss(
                    &self.y.column(0),
                    &self.y.column(1),
                    &col(0),
                    &col(1),
                    &self.rc,
                )
                .unwrap();
                let g = v.grads.clone();
                (v, g)
            }
            LossKind::CopulaGaussian => {
                let preds = Matrix::from_vec(n, 2, outputs.to_vec()).unwrap();
                let v = copula_rr_gaussian_loss(&self.y, &preds, &self.gaussian).unwrap();
                let g = v.grads[0].clone();
                return (v.scalar, g);
            }
            LossKind::CopulaNonparam => {
                let preds = Matrix::from_vec(n, 2, outputs.to_vec()).unwrap();
                let v = copula_rr_nonparam_loss(&self.y, &preds, &self.gamma, &self.cdfs).unwrap();
                let g = v.grads[0].clone();
                return (v.scalar, g);
            }
        };
        (value.scalar, interleave(&grads))
    }

    /// Loss at flat parameter vector `flat`.
    pub fn value_at(&self, flat: &[f64]) -> f64 {
        let mut b = self.backbone.clone();
        b.set_flat_params(flat).unwrap();
        let out = b.predict(&self.images).unwrap();
        self.loss(&out.outputs).0
    }

    /// Reverse-mode gradient with respect to every parameter, flattened in
    /// the order of [`Backbone::flat_params`].
    pub fn reverse_gradient(&self) -> Vec<f64> {
        let mut b = self.backbone.clone();
        b.zero_grad();
        let mut tape = Tape::new();
        let nodes = b.forward(&mut tape, &self.images).unwrap();
        let outputs = tape.value(nodes.outputs).data().to_vec();
        let (scalar, grad) = self.loss(&outputs);
        let lv = LossValue {
            scalar,
            per_sample: None,
            grads: vec![],
        };
        let root = attach(&mut tape, nodes.outputs, &lv, grad).unwrap();
        tape.backward(root, b.params_mut()).unwrap();
        b.params()
            .iter()
            .flat_map(|p| p.grad().unwrap().to_vec())
            .collect()
    }
}

/// Relative discrepancy |a − n| / max(|a|, |n|, floor).
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of `f` at `x` along the coordinates in `idx`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], idx: &[usize]) -> Vec<f64> {
    let mut probe = x.to_vec();
    idx.iter()
        .map(|&i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Up to `per_tensor` flat indices from every parameter tensor.
pub fn sample_coordinates(backbone: &Backbone<f64>, per_tensor: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = Vec::new();
    let mut offset = 0;
    for p in backbone.params() {
        let len = p.len();
        let picks = rand::seq::index::sample(&mut rng, len, per_tensor.min(len));
        idx.extend(picks.into_iter().map(|i| offset + i));
        offset += len;
    }
    idx
}

/// Worst relative error between reverse-mode and finite-difference
/// gradients on sampled coordinates. Entries are compared relative to
/// max(|a|, |n|, 1e-4·max|a|), so coordinates four orders of magnitude below
/// the largest gradient are judged against that scale rather than their own.
pub fn worst_backbone_error(p: &Problem, per_tensor: usize, seed: u64) -> f64 {
    let flat = p.backbone.flat_params();
    let analytic = p.reverse_gradient();
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let idx = sample_coordinates(&p.backbone, per_tensor, seed);
    let numeric = central_differences(|x| p.value_at(x), &flat, &idx);
    idx.iter()
        .zip(&numeric)
        .map(|(&i, &n)| relative_error(analytic[i], n, 1e-4 * scale))
        .fold(0.0, f64::max)
}
