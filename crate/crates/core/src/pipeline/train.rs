//! The three training stages: warm-up under the empirical loss, one-shot
//! copula estimation, and fine-tuning under the copula likelihood.

use std::collections::BTreeMap;
use std::fmt;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BandwidthChoice, TrainConfig};
use super::derive_seed;
use crate::copula::{
    estimate_rc_params, estimate_rr_gaussian_params, fit_nonparam, Bandwidth, CopulaParams, Task,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{
    attach, copula_rc_loss, copula_rr_gaussian_loss, copula_rr_nonparam_loss, cross_entropy_loss,
    interleave, mse_loss, LossValue,
};
use crate::metrics::{accuracy, auc, mae, rmse};
use crate::nn::{build_backbone, Backbone, BackboneSpec, Predictions, Tape, Tensor};
use crate::scalar::Scalar;
use crate::synth::Dataset;

/// Images `[N,1,9,9]` and responses `N×2` (second column binary for R-C).
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub images: Tensor<T>,
    pub y: Matrix<T>,
}

impl<T: Scalar> Split<T> {
    pub fn new(images: Tensor<T>, y: Matrix<T>) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        if images.shape().len() != 4 || n != y.rows() || y.cols() != 2 {
            return Err(Error::Dimension(format!(
                "split needs [N,C,H,W] images and an N×2 response matrix, got {:?} and {}x{}",
                images.shape(),
                y.rows(),
                y.cols()
            )));
        }
        Ok(Self { images, y })
    }

    pub fn from_dataset(data: &Dataset, idx: &[usize]) -> Self {
        Self {
            images: data.images(idx),
            y: data.responses(idx),
        }
    }

    pub fn len(&self) -> usize {
        self.y.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut y = Matrix::zeros(idx.len(), 2);
        for (r, &i) in idx.iter().enumerate() {
            y[(r, 0)] = self.y[(i, 0)];
            y[(r, 1)] = self.y[(i, 1)];
        }
        Self {
            images: self.images.select_rows(idx),
            y,
        }
    }

    fn hash_into(&self, h: &mut Sha256) {
        for v in self.images.data().iter().chain(self.y.as_slice()) {
            h.update(v.to_f64_lossy().to_le_bytes());
        }
    }
}

/// Training and early-stopping portions of the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData<T> {
    pub train: Split<T>,
    pub valid: Split<T>,
}

impl<T: Scalar> TrainData<T> {
    /// SHA-256 over the f64 little-endian values of both splits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.train.len() as u64).to_le_bytes());
        self.train.hash_into(&mut h);
        h.update((self.valid.len() as u64).to_le_bytes());
        self.valid.hash_into(&mut h);
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Warmup,
    Ccnn,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Warmup => "warmup",
            Stage::Ccnn => "ccnn",
        })
    }
}

/// One loss-curve point. `loss` is the stage objective divided by the number
/// of samples; `task1`/`task2` are the empirical per-task losses (MSE of y₁,
/// then MSE of y₂ or the mean cross entropy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub task1: f64,
    pub task2: f64,
}

pub const LOSS_CSV_HEADER: &str = "stage,epoch,split,loss,task1,task2";

pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_CSV_HEADER}\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.stage, r.epoch, r.split, r.loss, r.task1, r.task2
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: Stage,
    pub config: TrainConfig,
    pub seed: u64,
    pub dataset_digest: String,
    /// Epoch whose parameters were kept (0 = starting point).
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Copula parameters used by the stage objective, as text.
    pub copula: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    /// Parameters at the best validation epoch.
    pub backbone: Backbone<T>,
    /// Parameters after the last epoch run.
    pub final_backbone: Backbone<T>,
    pub copula: Option<CopulaParams<T>>,
    pub history: Vec<LossRecord>,
    pub provenance: Provenance,
}

fn spec_for(task: Task) -> BackboneSpec {
    match task {
        Task::Rc => BackboneSpec::regression_classification(),
        Task::RrGaussian | Task::RrNonparam => BackboneSpec::regression_regression(),
    }
}

fn check_task_data<T: Scalar>(task: Task, data: &TrainData<T>) -> Result<()> {
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::Degenerate(
            "training and validation splits must be nonempty".into(),
        ));
    }
    if task == Task::Rc {
        for split in [&data.train, &data.valid] {
            if let Some(v) = split
                .y
                .column(1)
                .into_iter()
                .find(|&v| v != T::zero() && v != T::one())
            {
                return Err(Error::Domain(format!(
                    "task rc needs a binary second response, found {v}"
                )));
            }
        }
    }
    Ok(())
}

enum Objective<'a, T> {
    Empirical(Task),
    Copula(&'a CopulaParams<T>),
}

struct Evaluated<T> {
    loss: LossValue<T>,
    grad: Vec<T>,
    task1: T,
    task2: T,
}

impl<T: Scalar> Objective<'_, T> {
    /// Loss on a batch divided by the batch size, with the gradient with
    /// respect to the row-major `[N,2]` head outputs.
    fn evaluate(&self, out: &Predictions<T>, y: &Matrix<T>) -> Result<Evaluated<T>> {
        let n = y.rows();
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mu1 = out.output_column(0);
        let mu2 = out.output_column(1);
        let y1 = y.column(0);
        let y2 = y.column(1);
        let task = match self {
            Objective::Empirical(t) => *t,
            Objective::Copula(c) => c.task(),
        };
        let first = mse_loss(&mu1, &y1)?;
        let second = if task == Task::Rc {
            cross_entropy_loss(&mu2, &y2)?.scaled(inv_n)
        } else {
            mse_loss(&mu2, &y2)?
        };
        let (task1, task2) = (first.scalar, second.scalar);
        let (loss, grad) = match self {
            Objective::Empirical(_) => {
                let grad = interleave(&[first.grads[0].clone(), second.grads[0].clone()]);
                let loss = LossValue {
                    scalar: task1 + task2,
                    per_sample: None,
                    grads: vec![grad.clone()],
                };
                (loss, grad)
            }
            Objective::Copula(params) => {
                let preds = Matrix::from_vec(n, 2, out.outputs.clone())?;
                let loss = match params {
                    CopulaParams::Rc(p) => copula_rc_loss(&y1, &y2, &mu1, &mu2, p)?,
                    CopulaParams::RrGaussian(p) => copula_rr_gaussian_loss(y, &preds, p)?,
                    CopulaParams::RrNonparam(p) => {
                        copula_rr_nonparam_loss(y, &preds, &p.gamma, &p.cdfs)?
                    }
                }
                .scaled(inv_n);
                let grad = if loss.grads.len() == 2 {
                    interleave(&loss.grads)
                } else {
                    loss.grads[0].clone()
                };
                (loss, grad)
            }
        };
        Ok(Evaluated {
            loss,
            grad,
            task1,
            task2,
        })
    }
}

struct FitOutcome {
    best_epoch: usize,
    epochs_run: usize,
    final_params: Vec<f64>,
}

fn diverged(stage: Stage, epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(m) | Error::Diverged(m) => Error::Diverged(format!(
            "{stage} epoch {epoch}: {m} (last finite epoch {})",
            epoch.saturating_sub(1)
        )),
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn fit<T: Scalar>(
    backbone: &mut Backbone<T>,
    data: &TrainData<T>,
    objective: &Objective<'_, T>,
    stage: Stage,
    epochs: usize,
    lr: f64,
    config: &TrainConfig,
    seed: u64,
    history: &mut Vec<LossRecord>,
) -> Result<FitOutcome> {
    let mut adam = crate::nn::Adam::new(T::lit(lr))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();

    let validate = |backbone: &Backbone<T>| -> Result<Evaluated<T>> {
        let out = backbone.predict(&data.valid.images)?;
        objective.evaluate(&out, &data.valid.y)
    };
    let record = |history: &mut Vec<LossRecord>, epoch, split: &str, loss: T, t1: T, t2: T| {
        history.push(LossRecord {
            stage,
            epoch,
            split: split.to_string(),
            loss: loss.to_f64_lossy(),
            task1: t1.to_f64_lossy(),
            task2: t2.to_f64_lossy(),
        });
    };

    let start = validate(backbone).map_err(|e| diverged(stage, 0, e))?;
    record(
        history,
        0,
        "valid",
        start.loss.scalar,
        start.task1,
        start.task2,
    );
    let mut best = start.loss.scalar;
    let mut best_epoch = 0;
    let mut best_params = backbone.flat_params();
    let mut epochs_run = 0;

    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut sum1, mut sum2) = (T::zero(), T::zero(), T::zero());
        for chunk in order.chunks(config.batch_size) {
            let batch = data.train.select(chunk);
            backbone.zero_grad();
            let mut tape = Tape::new();
            let nodes = backbone.forward(&mut tape, &batch.images)?;
            let out = Predictions {
                n: chunk.len(),
                p: 2,
                logits: tape.value(nodes.logits).data().to_vec(),
                outputs: tape.value(nodes.outputs).data().to_vec(),
            };
            let ev = objective
                .evaluate(&out, &batch.y)
                .map_err(|e| diverged(stage, epoch, e))?;
            let w = T::from_usize_lossy(chunk.len());
            sum += ev.loss.scalar * w;
            sum1 += ev.task1 * w;
            sum2 += ev.task2 * w;
            let root = attach(&mut tape, nodes.outputs, &ev.loss, ev.grad)?;
            tape.backward(root, backbone.params_mut())?;
            adam.step(backbone.params_mut())
                .map_err(|e| diverged(stage, epoch, e))?;
        }
        let nt = T::from_usize_lossy(n);
        record(history, epoch, "train", sum / nt, sum1 / nt, sum2 / nt);
        let ev = validate(backbone).map_err(|e| diverged(stage, epoch, e))?;
        let val = ev.loss.scalar;
        record(history, epoch, "valid", val, ev.task1, ev.task2);
        if !val.is_finite() {
            return Err(diverged(
                stage,
                epoch,
                Error::NonFinite(format!("validation loss {val}")),
            ));
        }
        epochs_run = epoch;
        debug!("{stage} epoch {epoch}: train {} valid {val}", sum / nt);
        if val < best {
            best = val;
            best_epoch = epoch;
            best_params = backbone.flat_params();
        } else if config.early_stopping && epoch - best_epoch >= config.patience {
            break;
        }
    }
    let final_params = backbone
        .flat_params()
        .iter()
        .map(|v| v.to_f64_lossy())
        .collect();
    if config.early_stopping {
        backbone.set_flat_params(&best_params)?;
    }
    info!("{stage}: kept epoch {best_epoch} of {epochs_run} (validation loss {best})");
    Ok(FitOutcome {
        best_epoch,
        epochs_run,
        final_params,
    })
}

fn with_params<T: Scalar>(backbone: &Backbone<T>, flat: &[f64]) -> Result<Backbone<T>> {
    let mut b = backbone.clone();
    let flat: Vec<T> = flat.iter().map(|&v| T::lit(v)).collect();
    b.set_flat_params(&flat)?;
    Ok(b)
}

/// Module 1: trains a fresh backbone on the unweighted sum of the empirical
/// per-task losses (mean MSE, cross entropy divided by the batch size).
pub fn warmup_train<T: Scalar>(
    data: &TrainData<T>,
    config: &TrainConfig,
) -> Result<TrainedModel<T>> {
    config.validate()?;
    check_task_data(config.task, data)?;
    let mut backbone = build_backbone(&spec_for(config.task), derive_seed(config.seed, &[0]))?;
    let mut history = Vec::new();
    let fit = fit(
        &mut backbone,
        data,
        &Objective::Empirical(config.task),
        Stage::Warmup,
        config.epochs_warmup,
        config.lr_warmup,
        config,
        derive_seed(config.seed, &[1]),
        &mut history,
    )?;
    Ok(TrainedModel {
        final_backbone: with_params(&backbone, &fit.final_params)?,
        backbone,
        copula: None,
        history,
        provenance: Provenance {
            stage: Stage::Warmup,
            config: config.clone(),
            seed: config.seed,
            dataset_digest: data.digest(),
            best_epoch: fit.best_epoch,
            epochs_run: fit.epochs_run,
            copula: None,
        },
    })
}

/// Module 2: estimates the copula once from the warm-up predictions on the
/// training split.
pub fn estimate_copula<T: Scalar>(
    warmup: &TrainedModel<T>,
    data: &TrainData<T>,
    task: Task,
) -> Result<CopulaParams<T>> {
    let pred = warmup.backbone.predict(&data.train.images)?;
    let y = &data.train.y;
    match task {
        Task::Rc => Ok(CopulaParams::Rc(estimate_rc_params(
            &y.column(0),
            &pred.output_column(0),
            &pred.logit_column(1),
        )?)),
        Task::RrGaussian | Task::RrNonparam => {
            let mut resid = Matrix::zeros(y.rows(), 2);
            for i in 0..y.rows() {
                for j in 0..2 {
                    resid[(i, j)] = y[(i, j)] - pred.outputs[i * 2 + j];
                }
            }
            if task == Task::RrGaussian {
                Ok(CopulaParams::RrGaussian(estimate_rr_gaussian_params(
                    &resid,
                )?))
            } else {
                let bw = match warmup.provenance.config.bandwidth {
                    BandwidthChoice::Silverman => Bandwidth::Silverman,
                    BandwidthChoice::Fixed(v) => Bandwidth::Fixed(T::lit(v)),
                };
                Ok(CopulaParams::RrNonparam(fit_nonparam(&resid, bw)?))
            }
        }
    }
}

/// Module 3: fine-tunes the warm-up backbone under the copula likelihood
/// with the copula held fixed, at learning rate lr_warmup · lr_ccnn_factor.
pub fn ccnn_train<T: Scalar>(
    warmup: &TrainedModel<T>,
    copula: &CopulaParams<T>,
    data: &TrainData<T>,
    config: &TrainConfig,
) -> Result<TrainedModel<T>> {
    config.validate()?;
    if copula.task() != config.task {
        return Err(Error::Config(format!(
            "copula estimated for task {} but config task is {}",
            copula.task().as_str(),
            config.task.as_str()
        )));
    }
    check_task_data(config.task, data)?;
    let mut backbone = warmup.backbone.clone();
    let mut history = Vec::new();
    let fit = fit(
        &mut backbone,
        data,
        &Objective::Copula(copula),
        Stage::Ccnn,
        config.epochs_ccnn,
        config.lr_ccnn(),
        config,
        derive_seed(config.seed, &[2]),
        &mut history,
    )?;
    Ok(TrainedModel {
        final_backbone: with_params(&backbone, &fit.final_params)?,
        backbone,
        copula: Some(copula.clone()),
        history,
        provenance: Provenance {
            stage: Stage::Ccnn,
            config: config.clone(),
            seed: config.seed,
            dataset_digest: data.digest(),
            best_epoch: fit.best_epoch,
            epochs_run: fit.epochs_run,
            copula: Some(copula.to_text()),
        },
    })
}

/// Validation-split objective of `model` under `copula` (or the empirical
/// loss when `None`), per sample.
pub fn objective_value<T: Scalar>(
    backbone: &Backbone<T>,
    split: &Split<T>,
    task: Task,
    copula: Option<&CopulaParams<T>>,
) -> Result<f64> {
    let out = backbone.predict(&split.images)?;
    let obj = match copula {
        Some(c) => Objective::Copula(c),
        None => Objective::Empirical(task),
    };
    Ok(obj.evaluate(&out, &split.y)?.loss.scalar.to_f64_lossy())
}

/// Test metrics: `rmse_y1`, `mae_y1`, then `rmse_y2`/`mae_y2` (R-R) or
/// `accuracy_y2`/`auc_y2` (R-C).
pub fn evaluate<T: Scalar>(
    backbone: &Backbone<T>,
    split: &Split<T>,
    task: Task,
) -> Result<BTreeMap<String, f64>> {
    let out = backbone.predict(&split.images)?;
    let to64 = |v: Vec<T>| {
        v.into_iter()
            .map(|x| x.to_f64_lossy())
            .collect::<Vec<f64>>()
    };
    let p1 = to64(out.output_column(0));
    let p2 = to64(out.output_column(1));
    let y1 = to64(split.y.column(0));
    let y2 = to64(split.y.column(1));
    let mut m = BTreeMap::new();
    m.insert("rmse_y1".to_string(), rmse(&p1, &y1)?);
    m.insert("mae_y1".to_string(), mae(&p1, &y1)?);
    if task == Task::Rc {
        m.insert("accuracy_y2".to_string(), accuracy(&p2, &y2, 0.5)?);
        m.insert("auc_y2".to_string(), auc(&p2, &y2)?);
    } else {
        m.insert("rmse_y2".to_string(), rmse(&p2, &y2)?);
        m.insert("mae_y2".to_string(), mae(&p2, &y2)?);
    }
    if let Some((k, v)) = m.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("metric {k} = {v}")));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_dataset, DataKind};

    fn small(task: Task, n: usize) -> TrainData<f64> {
        let kind = if task == Task::Rc {
            DataKind::Rc
        } else {
            DataKind::Rr
        };
        let ds = gen_dataset(kind, n, 3).unwrap();
        let cut = n * 3 / 4;
        TrainData {
            train: Split::from_dataset(&ds, &(0..cut).collect::<Vec<_>>()),
            valid: Split::from_dataset(&ds, &(cut..n).collect::<Vec<_>>()),
        }
    }

    fn quick(task: Task) -> TrainConfig {
        TrainConfig {
            task,
            epochs_warmup: 3,
            epochs_ccnn: 2,
            batch_size: 16,
            lr_warmup: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn stages_share_architecture_and_record_copula() {
        let data = small(Task::RrGaussian, 80);
        let cfg = quick(Task::RrGaussian);
        let warm = warmup_train(&data, &cfg).unwrap();
        let cop = estimate_copula(&warm, &data, cfg.task).unwrap();
        let cc = ccnn_train(&warm, &cop, &data, &cfg).unwrap();
        assert_eq!(warm.backbone.param_count(), cc.backbone.param_count());
        assert_eq!(cc.copula.as_ref(), Some(&cop));
        assert_eq!(
            cc.provenance.copula.as_deref(),
            Some(cop.to_text().as_str())
        );
        assert_eq!(warm.provenance.dataset_digest, data.digest());
        assert!(warm.history.iter().any(|r| r.split == "train"));
        assert!(loss_csv(&cc.history).starts_with(LOSS_CSV_HEADER));
    }

    #[test]
    fn warmup_is_deterministic() {
        let data = small(Task::Rc, 64);
        let cfg = quick(Task::Rc);
        let a = warmup_train(&data, &cfg).unwrap();
        let b = warmup_train(&data, &cfg).unwrap();
        assert_eq!(a.backbone.flat_params(), b.backbone.flat_params());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let data = small(Task::RrGaussian, 64);
        assert!(matches!(
            warmup_train(&data, &quick(Task::Rc)),
            Err(Error::Domain(_))
        ));
        let cfg = quick(Task::RrGaussian);
        let warm = warmup_train(&data, &cfg).unwrap();
        let cop = estimate_copula(&warm, &data, Task::RrGaussian).unwrap();
        assert!(matches!(
            ccnn_train(&warm, &cop, &data, &quick(Task::RrNonparam)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn metric_names() {
        let data = small(Task::Rc, 64);
        let warm = warmup_train(&data, &quick(Task::Rc)).unwrap();
        let m = evaluate(&warm.backbone, &data.valid, Task::Rc).unwrap();
        let keys: Vec<&str> = m.keys().map(String::as_str).collect();
        assert_eq!(keys, ["accuracy_y2", "auc_y2", "mae_y1", "rmse_y1"]);
    }
}
