use cecnn::copula::{cstar, RcCopulaParams, RrGaussianParams, SmoothedResidualCdf};
use cecnn::linalg::Matrix;
use cecnn::losses::{
    copula_rc_loss, copula_rr_gaussian_loss, copula_rr_nonparam_loss, cross_entropy_loss,
};
use cecnn::metrics::{accuracy, auc, mae, rmse};
use proptest::prelude::*;

/// Exhaustive pair counting: P(score⁺ > score⁻) + ½ P(tie).
fn brute_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut twice = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1.0 {
            pos += 1;
        } else {
            neg += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0.0 {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / (2 * pos * neg) as f64
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=12).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..5, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(prop::bool::ANY, n)
                .prop_map(|v| v.into_iter().map(|b| f64::from(u8::from(b))).collect()),
        )
    })
}

fn both_classes(labels: &[f64]) -> bool {
    labels.contains(&0.0) && labels.contains(&1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn auc_equals_pair_counting((scores, labels) in scored_labels()) {
        prop_assume!(both_classes(&labels));
        prop_assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }

    #[test]
    fn auc_flips_with_labels((scores, labels) in scored_labels()) {
        prop_assume!(both_classes(&labels));
        let flipped: Vec<f64> = labels.iter().map(|y| 1.0 - y).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&scores, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn auc_invariant_under_monotone_maps((scores, labels) in scored_labels(), shift in -3.0..3.0f64) {
        prop_assume!(both_classes(&labels));
        let mapped: Vec<f64> = scores.iter().map(|s| (0.7 * s + shift).exp()).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
    }
}

proptest! {
    #[test]
    fn regression_metric_ordering(
        pairs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..40),
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = rmse(&p, &t).unwrap();
        let m = mae(&p, &t).unwrap();
        prop_assert!(r >= m - 1e-12);
        prop_assert!(r >= 0.0);
        prop_assert_eq!(rmse(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_complements_under_flip(
        pairs in prop::collection::vec((0.01..0.99f64, prop::bool::ANY), 1..30),
    ) {
        let probs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<f64> = pairs.iter().map(|p| f64::from(u8::from(p.1))).collect();
        prop_assume!(probs.iter().all(|&p| p != 0.5));
        let flipped: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
        let a = accuracy(&probs, &labels, 0.5).unwrap();
        let b = accuracy(&flipped, &labels, 0.5).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cstar_is_increasing_in_mu2(
        a in 0.01..0.99f64, b in 0.01..0.99f64, z1 in -4.0..4.0f64, rho in -0.95..0.95f64,
    ) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(cstar(lo, z1, rho) <= cstar(hi, z1, rho));
    }

    #[test]
    fn cstar_sign_symmetry(mu2 in 0.01..0.99f64, z1 in -4.0..4.0f64, rho in -0.95..0.95f64) {
        let sum = cstar(mu2, z1, rho) + cstar(1.0 - mu2, -z1, rho);
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!((cstar(mu2, z1, -rho) - cstar(mu2, -z1, rho)).abs() < 1e-12);
    }

    #[test]
    fn cstar_ignores_z1_without_correlation(mu2 in 0.01..0.99f64, z1 in -4.0..4.0f64) {
        prop_assert!((cstar(mu2, z1, 0.0) - mu2).abs() < 1e-12);
    }

    #[test]
    fn rc_loss_without_correlation_splits(
        rows in prop::collection::vec((-3.0..3.0f64, prop::bool::ANY, -3.0..3.0f64, 0.02..0.98f64), 1..30),
        sigma in 0.3..3.0f64,
    ) {
        let y1: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let y2: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.1))).collect();
        let mu1: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let mu2: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let l = copula_rc_loss(&y1, &y2, &mu1, &mu2, &RcCopulaParams::new(0.0, sigma).unwrap()).unwrap();
        let weighted: f64 = y1.iter().zip(&mu1).map(|(y, m)| (y - m).powi(2)).sum::<f64>()
            / (2.0 * sigma * sigma);
        let ce = cross_entropy_loss(&mu2, &y2).unwrap().scalar;
        prop_assert!((l.scalar - weighted - ce).abs() <= 1e-10);
    }

    #[test]
    fn gaussian_loss_with_identity_gamma(
        rows in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..30),
        s1 in 0.3..3.0f64, s2 in 0.3..3.0f64,
    ) {
        let n = rows.len();
        let y = Matrix::from_rows(&rows.iter().map(|r| vec![r.0, r.1]).collect::<Vec<_>>()).unwrap();
        let preds = Matrix::zeros(n, 2);
        let params = RrGaussianParams::new(Matrix::identity(2), vec![s1, s2]).unwrap();
        let l = copula_rr_gaussian_loss(&y, &preds, &params).unwrap();
        let weighted: f64 = rows.iter().map(|r| r.0 * r.0 / (2.0 * s1 * s1) + r.1 * r.1 / (2.0 * s2 * s2)).sum();
        let constant = n as f64 * ((s1 * s2).ln() + (2.0 * std::f64::consts::PI).ln());
        prop_assert!((l.scalar - weighted - constant).abs() <= 1e-10);
    }

    #[test]
    fn nonparam_loss_with_identity_gamma(
        residuals in prop::collection::vec(-4.0..4.0f64, 5..40),
        rows in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..20),
    ) {
        let cdf = SmoothedResidualCdf::new(&residuals).unwrap();
        let cdfs = vec![cdf.clone(), cdf.clone()];
        let y = Matrix::from_rows(&rows.iter().map(|r| vec![r.0, r.1]).collect::<Vec<_>>()).unwrap();
        let preds = Matrix::zeros(rows.len(), 2);
        let l = copula_rr_nonparam_loss(&y, &preds, &Matrix::identity(2), &cdfs).unwrap();
        let expected: f64 = rows.iter().map(|r| -cdf.pdf(r.0).ln() - cdf.pdf(r.1).ln()).sum();
        prop_assert!((l.scalar - expected).abs() <= 1e-10);
    }

    #[test]
    fn smoothed_cdf_tails_agree(residuals in prop::collection::vec(-4.0..4.0f64, 3..40), t in -12.0..12.0f64) {
        let cdf = SmoothedResidualCdf::new(&residuals).unwrap();
        prop_assert!((cdf.cdf(t) + cdf.sf(t) - 1.0).abs() < 1e-12);
        let (q, _) = cdf.gaussian_score(t);
        let (q_up, _) = cdf.gaussian_score(t + 0.5);
        prop_assert!(q_up >= q);
    }
}
