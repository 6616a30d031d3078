//! Repeated k-fold comparison of the warm-up CNN (baseline) against the
//! full three-stage model, with paired summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{CvConfig, TrainConfig};
use super::derive_seed;
use super::train::{
    ccnn_train, estimate_copula, evaluate, warmup_train, LossRecord, Split, TrainData,
};
use crate::copula::Task;
use crate::error::{Error, Result};
use crate::synth::{DataKind, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Cecnn,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::Cecnn => "cecnn",
        })
    }
}

/// Held-out metrics of one method on one fold. Keys ending in `_final` are
/// computed from the last-epoch parameters instead of the early-stopped ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub round: usize,
    pub fold: usize,
    pub method: Method,
    pub metrics: BTreeMap<String, f64>,
}

/// Training details of one (round, fold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub round: usize,
    pub fold: usize,
    pub test_size: usize,
    pub dataset_digest: String,
    pub warmup_best_epoch: usize,
    pub warmup_epochs: usize,
    pub ccnn_best_epoch: usize,
    pub ccnn_epochs: usize,
    pub copula: String,
    #[serde(skip)]
    pub history: Vec<LossRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub round: usize,
    pub fold: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CvOutcome {
    /// Ordered by (round, fold, method).
    pub results: Vec<FoldResult>,
    pub runs: Vec<FoldRun>,
    pub failures: Vec<FoldFailure>,
}

/// Dataset family a task trains on.
pub fn data_kind(task: Task) -> DataKind {
    match task {
        Task::Rc => DataKind::Rc,
        Task::RrGaussian | Task::RrNonparam => DataKind::Rr,
    }
}

/// Test folds of round `round`: a ChaCha8 permutation seeded from
/// (`seed`, round) cut into `k` contiguous pieces.
pub fn fold_indices(n: usize, k: usize, seed: u64, round: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &[0xC5, round as u64],
    )));
    (0..k)
        .map(|f| perm[f * n / k..(f + 1) * n / k].to_vec())
        .collect()
}

/// Train/validation/test indices in the ratio 6:2:2 from a ChaCha8
/// permutation seeded from `seed`.
pub fn single_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x622])));
    let a = n * 6 / 10;
    let b = n * 8 / 10;
    (perm[..a].to_vec(), perm[a..b].to_vec(), perm[b..].to_vec())
}

fn fold_data(
    ds: &Dataset,
    folds: &[Vec<usize>],
    fold: usize,
    valid_fraction: f64,
) -> (TrainData<f64>, Split<f64>) {
    let rest: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(f, _)| *f != fold)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    let n_valid = ((rest.len() as f64) * valid_fraction).round().max(1.0) as usize;
    let cut = rest.len() - n_valid;
    (
        TrainData {
            train: Split::from_dataset(ds, &rest[..cut]),
            valid: Split::from_dataset(ds, &rest[cut..]),
        },
        Split::from_dataset(ds, &folds[fold]),
    )
}

fn with_final(
    backbone: &crate::nn::Backbone<f64>,
    last: &crate::nn::Backbone<f64>,
    test: &Split<f64>,
    task: Task,
) -> Result<BTreeMap<String, f64>> {
    let mut m = evaluate(backbone, test, task)?;
    for (k, v) in evaluate(last, test, task)? {
        m.insert(format!("{k}_final"), v);
    }
    Ok(m)
}

fn run_fold(
    ds: &Dataset,
    config: &TrainConfig,
    folds: &[Vec<usize>],
    round: usize,
    fold: usize,
) -> Result<(FoldResult, FoldResult, FoldRun)> {
    let (data, test) = fold_data(ds, folds, fold, config.validation_fraction);
    let cfg = TrainConfig {
        seed: derive_seed(config.seed, &[round as u64, fold as u64]),
        ..config.clone()
    };
    let warm = warmup_train(&data, &cfg)?;
    let copula = estimate_copula(&warm, &data, cfg.task)?;
    let ccnn = ccnn_train(&warm, &copula, &data, &cfg)?;
    let base = FoldResult {
        round,
        fold,
        method: Method::Baseline,
        metrics: with_final(&warm.backbone, &warm.final_backbone, &test, cfg.task)?,
    };
    let full = FoldResult {
        round,
        fold,
        method: Method::Cecnn,
        metrics: with_final(&ccnn.backbone, &ccnn.final_backbone, &test, cfg.task)?,
    };
    let mut history = warm.history;
    history.extend(ccnn.history);
    let run = FoldRun {
        round,
        fold,
        test_size: test.len(),
        dataset_digest: ccnn.provenance.dataset_digest,
        warmup_best_epoch: warm.provenance.best_epoch,
        warmup_epochs: warm.provenance.epochs_run,
        ccnn_best_epoch: ccnn.provenance.best_epoch,
        ccnn_epochs: ccnn.provenance.epochs_run,
        copula: copula.to_text(),
        history,
    };
    Ok((base, full, run))
}

type FoldOutput = (FoldResult, FoldResult, FoldRun);

/// Runs `rounds` × `folds` baseline/CeCNN comparisons. Both methods of a
/// (round, fold) see the same split; the baseline is the warm-up model that
/// the CeCNN fine-tunes. Jobs run on `workers` threads and are merged in
/// (round, fold) order, so the outcome does not depend on the worker count.
/// Failed folds are listed in `failures`; the others are still reported.
pub fn run_cv(dataset: &Dataset, config: &TrainConfig, cv: &CvConfig) -> Result<CvOutcome> {
    config.validate()?;
    let k = cv.folds;
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if cv.rounds == 0 {
        return Err(Error::Config("need at least one round".into()));
    }
    if dataset.len() < 10 * k {
        return Err(Error::Degenerate(format!(
            "dataset of {} samples is too small for {k} folds (need {})",
            dataset.len(),
            10 * k
        )));
    }
    if dataset.kind != data_kind(config.task) {
        return Err(Error::Config(format!(
            "task {} needs a {} dataset, got {}",
            config.task.as_str(),
            data_kind(config.task).as_str(),
            dataset.kind.as_str()
        )));
    }
    let splits: Vec<Vec<Vec<usize>>> = (0..cv.rounds)
        .map(|r| fold_indices(dataset.len(), k, config.seed, r))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cv.rounds)
        .flat_map(|r| (0..k).map(move |f| (r, f)))
        .collect();
    let slots: Vec<Mutex<Option<Result<FoldOutput>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cv.workers.clamp(1, jobs.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(r, f)) = jobs.get(j) else { break };
                log::info!("round {r} fold {f}: training");
                let out = run_fold(dataset, config, &splits[r], r, f);
                *slots[j].lock().expect("slot lock") = Some(out);
            });
        }
    });
    let mut outcome = CvOutcome::default();
    for (slot, &(round, fold)) in slots.into_iter().zip(&jobs) {
        match slot.into_inner().expect("slot lock").expect("job ran") {
            Ok((base, full, run)) => {
                outcome.results.push(base);
                outcome.results.push(full);
                outcome.runs.push(run);
            }
            Err(e) => {
                log::error!("round {round} fold {fold} aborted: {e}");
                outcome.failures.push(FoldFailure {
                    round,
                    fold,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(outcome)
}

pub const RESULTS_CSV_HEADER: &str = "round,fold,method,metric,value";

/// Long format, one row per (round, fold, method, metric).
pub fn results_csv(results: &[FoldResult]) -> String {
    let mut out = format!("{RESULTS_CSV_HEADER}\n");
    for r in results {
        for (metric, value) in &r.metrics {
            out.push_str(&format!(
                "{},{},{},{metric},{value}\n",
                r.round, r.fold, r.method
            ));
        }
    }
    out
}

/// Loss curves of every fold: `round,fold,` followed by the loss-log columns.
pub fn fold_losses_csv(runs: &[FoldRun]) -> String {
    let mut out = format!("round,fold,{}\n", super::train::LOSS_CSV_HEADER);
    for run in runs {
        for r in &run.history {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                run.round, run.fold, r.stage, r.epoch, r.split, r.loss, r.task1, r.task2
            ));
        }
    }
    out
}

/// Larger is better for accuracy and AUC, smaller for error metrics.
pub fn higher_is_better(metric: &str) -> bool {
    metric.starts_with("auc") || metric.starts_with("accuracy")
}

/// P(Binom(m, ½) ≥ wins) where m = wins + losses (ties dropped).
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let m = wins + losses;
    if m == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut c = 1.0_f64;
    for k in 0..=m {
        if k > 0 {
            c = c * (m + 1 - k) as f64 / k as f64;
        }
        if k >= wins {
            total += c;
        }
    }
    total / 2f64.powi(m as i32)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Paired comparison of one metric over the folds where both methods ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub pairs: usize,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    pub cecnn_mean: f64,
    pub cecnn_sd: f64,
    /// Mean and SD of cecnn − baseline.
    pub diff_mean: f64,
    pub diff_sd: f64,
    /// Folds where the CeCNN is strictly better / worse / equal.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided sign test for "CeCNN better".
    pub sign_p: f64,
}

pub fn summarize(results: &[FoldResult]) -> Vec<MetricSummary> {
    let mut pairs: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut by_key: BTreeMap<(usize, usize), [Option<&FoldResult>; 2]> = BTreeMap::new();
    for r in results {
        let slot = by_key.entry((r.round, r.fold)).or_default();
        slot[usize::from(r.method == Method::Cecnn)] = Some(r);
    }
    for [b, c] in by_key.values() {
        let (Some(b), Some(c)) = (b, c) else { continue };
        for (metric, &bv) in &b.metrics {
            if let Some(&cv) = c.metrics.get(metric) {
                pairs.entry(metric.as_str()).or_default().push((bv, cv));
            }
        }
    }
    pairs
        .into_iter()
        .map(|(metric, v)| {
            let base: Vec<f64> = v.iter().map(|p| p.0).collect();
            let full: Vec<f64> = v.iter().map(|p| p.1).collect();
            let diff: Vec<f64> = v.iter().map(|p| p.1 - p.0).collect();
            let sign = if higher_is_better(metric) { 1.0 } else { -1.0 };
            let wins = diff.iter().filter(|d| sign * **d > 0.0).count();
            let losses = diff.iter().filter(|d| sign * **d < 0.0).count();
            let (baseline_mean, baseline_sd) = mean_sd(&base);
            let (cecnn_mean, cecnn_sd) = mean_sd(&full);
            let (diff_mean, diff_sd) = mean_sd(&diff);
            MetricSummary {
                metric: metric.to_string(),
                pairs: v.len(),
                baseline_mean,
                baseline_sd,
                cecnn_mean,
                cecnn_sd,
                diff_mean,
                diff_sd,
                wins,
                losses,
                ties: v.len() - wins - losses,
                sign_p: sign_test_p(wins, losses),
            }
        })
        .collect()
}

pub fn summary_csv(summary: &[MetricSummary]) -> String {
    let mut out = String::from(
        "metric,pairs,baseline_mean,baseline_sd,cecnn_mean,cecnn_sd,diff_mean,diff_sd,wins,losses,ties,sign_p\n",
    );
    for s in summary {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.metric,
            s.pairs,
            s.baseline_mean,
            s.baseline_sd,
            s.cecnn_mean,
            s.cecnn_sd,
            s.diff_mean,
            s.diff_sd,
            s.wins,
            s.losses,
            s.ties,
            s.sign_p
        ));
    }
    out
}

/// Fixed-width table for the terminal.
pub fn summary_table(summary: &[MetricSummary]) -> String {
    let mut out = format!(
        "{:<18} {:>5} {:>21} {:>21} {:>12} {:>7} {:>8}\n",
        "metric", "pairs", "baseline mean (sd)", "cecnn mean (sd)", "diff", "w/l/t", "sign p"
    );
    for s in summary {
        out.push_str(&format!(
            "{:<18} {:>5} {:>10.4} ({:>8.4}) {:>10.4} ({:>8.4}) {:>12.5} {:>7} {:>8.4}\n",
            s.metric,
            s.pairs,
            s.baseline_mean,
            s.baseline_sd,
            s.cecnn_mean,
            s.cecnn_sd,
            s.diff_mean,
            format!("{}/{}/{}", s.wins, s.losses, s.ties),
            s.sign_p
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_dataset;

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(0, 0), 1.0);
        assert!((sign_test_p(8, 2) - 56.0 / 1024.0).abs() < 1e-15);
        assert!((sign_test_p(10, 0) - 1.0 / 1024.0).abs() < 1e-15);
        assert_eq!(sign_test_p(0, 5), 1.0);
    }

    #[test]
    fn single_split_ratio() {
        let (a, b, c) = single_split(100, 4);
        assert_eq!((a.len(), b.len(), c.len()), (60, 20, 20));
        let mut all = [a, b, c].concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn folds_partition_the_data() {
        let folds = fold_indices(53, 5, 1, 0);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..53).collect::<Vec<_>>());
        assert_ne!(fold_indices(53, 5, 1, 1), folds);
    }

    #[test]
    fn summary_pairs_by_fold() {
        let mk = |fold, method, v: f64| FoldResult {
            round: 0,
            fold,
            method,
            metrics: [("rmse_y1".to_string(), v), ("auc_y2".to_string(), v)].into(),
        };
        let res = vec![
            mk(0, Method::Baseline, 1.0),
            mk(0, Method::Cecnn, 0.5),
            mk(1, Method::Baseline, 1.0),
            mk(1, Method::Cecnn, 1.0),
        ];
        let s = summarize(&res);
        let rmse = s.iter().find(|m| m.metric == "rmse_y1").unwrap();
        assert_eq!((rmse.wins, rmse.losses, rmse.ties), (1, 0, 1));
        assert!((rmse.diff_mean + 0.25).abs() < 1e-15);
        let auc = s.iter().find(|m| m.metric == "auc_y2").unwrap();
        assert_eq!((auc.wins, auc.losses), (0, 1));
        assert_eq!(results_csv(&res).lines().count(), 1 + 8);
    }

    #[test]
    fn small_dataset_is_rejected() {
        let ds = gen_dataset(DataKind::Rr, 30, 1).unwrap();
        let cv = CvConfig {
            folds: 5,
            rounds: 1,
            workers: 1,
        };
        assert!(matches!(
            run_cv(&ds, &TrainConfig::default(), &cv),
            Err(Error::Degenerate(_))
        ));
    }
}
