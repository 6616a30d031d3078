//! Evaluation metrics: RMSE, MAE, classification accuracy and AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, n: usize) -> Self {
        Self {
            name: name.into(),
            value,
            n,
        }
    }
}

fn check<T>(what: &str, a: &[T], b: &[T]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Dimension(format!("{what}: empty input")));
    }
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "{what}: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn is_positive<T: Scalar>(what: &str, y: T) -> Result<bool> {
    if y == T::one() {
        Ok(true)
    } else if y == T::zero() {
        Ok(false)
    } else {
        Err(Error::Domain(format!("{what}: label {y} is not 0 or 1")))
    }
}

/// √(n⁻¹ Σ (pᵢ − tᵢ)²).
pub fn rmse<T: Scalar>(preds: &[T], targets: &[T]) -> Result<T> {
    check("rmse", preds, targets)?;
    let ss: T = preds
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok((ss / T::from_usize_lossy(preds.len())).sqrt())
}

/// n⁻¹ Σ |pᵢ − tᵢ|.
pub fn mae<T: Scalar>(preds: &[T], targets: &[T]) -> Result<T> {
    check("mae", preds, targets)?;
    let s: T = preds
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t).abs())
        .sum();
    Ok(s / T::from_usize_lossy(preds.len()))
}

/// Fraction of samples with I(probᵢ ≥ threshold) equal to the label.
pub fn accuracy<T: Scalar>(probs: &[T], labels: &[T], threshold: T) -> Result<T> {
    check("accuracy", probs, labels)?;
    let mut hits = 0usize;
    for (&p, &y) in probs.iter().zip(labels) {
        let y = is_positive("accuracy", y)?;
        hits += usize::from((p >= threshold) == y);
    }
    Ok(T::from_usize_lossy(hits) / T::from_usize_lossy(probs.len()))
}

/// Probability that a random positive outscores a random negative, ties
/// counted ½ (Mann-Whitney U over mid-ranks).
pub fn auc<T: Scalar>(scores: &[T], labels: &[T]) -> Result<T> {
    check("auc", scores, labels)?;
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("auc: score {s}")));
    }
    let positive = labels
        .iter()
        .map(|&y| is_positive("auc", y))
        .collect::<Result<Vec<bool>>>()?;
    let n1 = positive.iter().filter(|&&p| p).count();
    let n0 = positive.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::UndefinedMetric("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN scores"));
    // twice the rank sum of the positives, with tied groups at their mid-rank
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share the mid-rank (i+j+2)/2
        let mid2 = (i + j + 2) as u128;
        let pos = order[i..=j].iter().filter(|&&k| positive[k]).count() as u128;
        twice_rank_sum += pos * mid2;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - (n1 as u128) * (n1 as u128 + 1);
    let denom = 2.0 * n1 as f64 * n0 as f64;
    Ok(T::lit(twice_u as f64 / denom))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_examples() {
        let t = [1.0_f64, 2.0];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        let p = [3.0_f64, -4.0];
        let z = [0.0, 0.0];
        assert!((rmse(&p, &z).unwrap() - 12.5_f64.sqrt()).abs() < 1e-12);
        assert_eq!(mae(&p, &z).unwrap(), 3.5);
        assert!(rmse::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let y = [1.0_f64, 0.0, 1.0];
        assert_eq!(accuracy(&y, &y, 0.5).unwrap(), 1.0);
        let flipped: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        assert_eq!(accuracy(&flipped, &y, 0.5).unwrap(), 0.0);
        let a = accuracy(&[0.6_f64, 0.4, 0.7], &[1.0, 1.0, 0.0], 0.5).unwrap();
        assert!((a - 1.0 / 3.0).abs() < 1e-12);
        assert!(accuracy(&[0.5_f64], &[0.3], 0.5).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            auc(&[0.1_f64, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(),
            1.0
        );
        assert_eq!(auc(&[0.3_f64; 5], &[0.0, 1.0, 0.0, 1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(
            auc(&[0.1_f64, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap(),
            0.75
        );
        assert!(matches!(
            auc(&[0.1_f64, 0.2], &[1.0, 1.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }
}
