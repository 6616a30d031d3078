use cecnn::copula::Task;
use cecnn::gls::{gen_sur_instance, gls_fit, ols_fit, Overlap, SurDesign};
use cecnn::linalg::Matrix;
use cecnn::pipeline::{BandwidthChoice, RunConfig};
use cecnn::synth::{gen_dataset, DataKind, Dataset};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dataset_container_round_trips(
        kind in prop::sample::select(vec![DataKind::Rc, DataKind::Rr]),
        n in 1usize..40,
        seed in any::<u64>(),
    ) {
        let ds = gen_dataset(kind, n, seed).unwrap();
        let back = Dataset::from_bytes(&ds.to_bytes()).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.digest(), ds.digest());
    }

    #[test]
    fn truncated_container_is_rejected(n in 1usize..10, cut in 1usize..64) {
        let bytes = gen_dataset(DataKind::Rr, n, 3).unwrap().to_bytes();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(Dataset::from_bytes(&bytes[..keep]).is_err());
    }

    #[test]
    fn config_round_trips_through_toml(
        task in prop::sample::select(vec![Task::Rc, Task::RrGaussian, Task::RrNonparam]),
        n in 10usize..100_000,
        seed in any::<u32>(),
        folds in 2usize..10,
        batch in 1usize..512,
        fixed in prop::option::of(0.01..5.0f64),
        rho in -0.9..0.9f64,
    ) {
        let mut cfg = RunConfig::default();
        cfg.train.task = task;
        cfg.data.n = n;
        cfg.train.seed = u64::from(seed);
        cfg.cv.folds = folds;
        cfg.train.batch_size = batch;
        cfg.train.bandwidth = fixed.map_or(BandwidthChoice::Silverman, BandwidthChoice::Fixed);
        cfg.gls.rho = rho;
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn gls_equals_ols_without_correlation(
        n in 20usize..200,
        k in 4usize..10,
        partial in prop::bool::ANY,
        s1 in 0.5..3.0f64,
        s2 in 0.5..3.0f64,
        seed in any::<u64>(),
    ) {
        let overlap = if partial { Overlap::Partial } else { Overlap::Disjoint };
        let design = SurDesign::new(n, k, overlap, 0.0, [s1, s2]);
        let inst = gen_sur_instance(&design, seed).unwrap();
        let sigma = Matrix::diag(&[s1 * s1, s2 * s2]);
        let ols = ols_fit(&inst).unwrap();
        let gls = gls_fit(&inst, &sigma).unwrap();
        for j in 0..2 {
            prop_assert!((ols.biases[j] - gls.biases[j]).abs() < 1e-9);
            for (a, b) in ols.weights[j].iter().zip(&gls.weights[j]) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn dataset_generation_is_reproducible() {
    for kind in [DataKind::Rc, DataKind::Rr] {
        let a = gen_dataset(kind, 50, 9).unwrap();
        assert_eq!(a.to_bytes(), gen_dataset(kind, 50, 9).unwrap().to_bytes());
        assert_ne!(a.digest(), gen_dataset(kind, 50, 10).unwrap().digest());
        let prefix = gen_dataset(kind, 20, 9).unwrap();
        assert_eq!(prefix.samples[..], a.samples[..20]);
    }
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_dataset(DataKind::Rc, 25, 4).unwrap();
    let path = dir.path().join("rc.bin");
    ds.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), ds);
}
