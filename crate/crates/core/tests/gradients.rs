mod common;

use cecnn::nn::{ActivationKind, Tape, Tensor};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(
        shape,
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Builds `Σ w ⊙ op(inputs)` on a fresh tape, so every output element gets
/// a distinct upstream weight.
fn weighted_sum(
    inputs: &[Tensor<f64>],
    weights_seed: u64,
    op: &dyn Fn(&mut Tape<f64>, &[cecnn::nn::NodeId]) -> cecnn::nn::NodeId,
) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let ids: Vec<_> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()).unwrap())
        .collect();
    let out = op(&mut tape, &ids);
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
    let w = tape.constant(random_tensor(&mut rng, &shape)).unwrap();
    let prod = tape.mul(out, w).unwrap();
    let root = tape.sum(prod).unwrap();
    let value = tape.value(root).data()[0];
    tape.backward(root, &mut []).unwrap();
    let grads = ids
        .iter()
        .map(|&id| tape.grad(id).unwrap().to_vec())
        .collect();
    (value, grads)
}

fn check_op(
    inputs: Vec<Tensor<f64>>,
    seed: u64,
    op: &dyn Fn(&mut Tape<f64>, &[cecnn::nn::NodeId]) -> cecnn::nn::NodeId,
) -> f64 {
    let (_, grads) = weighted_sum(&inputs, seed, op);
    let mut worst = 0.0f64;
    for (k, g) in grads.iter().enumerate() {
        let flat = inputs[k].data().to_vec();
        let f = |x: &[f64]| {
            let mut perturbed = inputs.clone();
            perturbed[k] = Tensor::new(inputs[k].shape(), x.to_vec()).unwrap();
            weighted_sum(&perturbed, seed, op).0
        };
        let idx: Vec<usize> = (0..flat.len()).collect();
        let numeric = central_differences(f, &flat, &idx);
        for (&a, &n) in g.iter().zip(&numeric) {
            worst = worst.max(relative_error(a, n, 1e-6));
        }
    }
    worst
}

#[test]
fn conv2d_gradients_with_stride_and_padding() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (stride, padding) = [(1, 0), (1, 1), (2, 1), (2, 0)][seed as usize % 4];
        let inputs = vec![
            random_tensor(&mut rng, &[2, 2, 6, 5]),
            random_tensor(&mut rng, &[3, 2, 3, 3]),
            random_tensor(&mut rng, &[3]),
        ];
        let err = check_op(inputs, seed, &|t, ids| {
            t.conv2d(ids[0], ids[1], ids[2], stride, padding).unwrap()
        });
        assert!(err <= FD_TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn maxpool_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // distinct values spaced far beyond the FD step, so no window has a near-tie
        let mut values: Vec<f64> = (0..216).map(|i| i as f64 * 0.01).collect();
        rand::seq::SliceRandom::shuffle(values.as_mut_slice(), &mut rng);
        let inputs = vec![Tensor::new(&[2, 3, 6, 6], values).unwrap()];
        let (pool, stride) = if seed % 2 == 0 { (2, 2) } else { (3, 1) };
        let err = check_op(inputs, seed, &|t, ids| {
            t.maxpool2d(ids[0], pool, stride).unwrap()
        });
        assert!(err <= FD_TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn dense_and_activation_gradients() {
    let kinds = [
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Relu,
        ActivationKind::Identity,
    ];
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![
            random_tensor(&mut rng, &[4, 5]),
            random_tensor(&mut rng, &[3, 5]),
            random_tensor(&mut rng, &[3]),
        ];
        let kind = kinds[seed as usize % 4];
        let err = check_op(inputs, seed, &|t, ids| {
            let d = t.dense(ids[0], ids[1], ids[2]).unwrap();
            t.activation(d, kind).unwrap()
        });
        assert!(err <= FD_TOLERANCE, "seed {seed} {kind:?}: {err}");
    }
}

#[test]
fn mixed_head_activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random_tensor(&mut rng, &[5, 2])];
    let err = check_op(inputs, 3, &|t, ids| {
        t.column_activation(ids[0], &[ActivationKind::Identity, ActivationKind::Sigmoid])
            .unwrap()
    });
    assert!(err <= FD_TOLERANCE, "{err}");
}

#[test]
fn composed_backbone_gradients_for_every_loss() {
    for kind in LOSS_KINDS {
        for seed in 0..3 {
            let err = worst_backbone_error(&problem(kind, seed, 3), 6, seed);
            assert!(err <= FD_TOLERANCE, "{} seed {seed}: {err}", kind.name());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_of_head_outputs_match_differences(
        kind in prop::sample::select(LOSS_KINDS.to_vec()),
        seed in 0u64..1000,
    ) {
        let p = problem(kind, seed, 3);
        let err = worst_backbone_error(&p, 2, seed);
        prop_assert!(err <= FD_TOLERANCE, "{} seed {}: {}", kind.name(), seed, err);
    }
}
