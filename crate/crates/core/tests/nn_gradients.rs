use lnm_core::nn::{cross_entropy, grad_check, softmax, LossKind, LossTerms, MlpModel, Targets};
use lnm_core::RngState;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const K: usize = 3;

fn random_problem(seed: u64) -> (MlpModel, Array2<f64>, Vec<usize>, Array2<f64>) {
    let mut rng = RngState::new(seed);
    let model = MlpModel::new(&[4, 3, K], &mut rng).unwrap();
    let b = 6;
    let x = Array2::from_shape_fn((b, 4), |_| StandardNormal.sample(&mut rng));
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..K)).collect();
    let raw = Array2::from_shape_fn((b, K), |_| StandardNormal.sample(&mut rng));
    let peer = softmax(raw.view()).unwrap();
    (model, x, labels, peer)
}

fn kinds(peer: &Array2<f64>, seed: u64) -> Vec<LossKind> {
    let mut rng = RngState::with_stream(seed, 99);
    let mut t = Array2::from_shape_fn((K, K), |(i, j)| if i == j { 3.0 } else { rng.random::<f64>() });
    for mut row in t.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    vec![
        LossKind::CrossEntropy,
        LossKind::Symmetric {
            alpha: 0.1,
            beta: 1.0,
            log_floor: -4.0,
        },
        LossKind::Smoothed { epsilon: 0.1 },
        LossKind::VolMin {
            transition: t,
            volume_weight: 1e-4,
        },
        LossKind::Custom {
            terms: LossTerms {
                ce: 0.7,
                rce: 1.0,
                neg_entropy: 1.0,
                sq_err: 25.0,
                sym_kl: 0.3,
                ..LossTerms::default()
            },
            row_weights: Some((0..peer.nrows()).map(|i| 0.5 + 0.25 * i as f64).collect()),
            peer: Some(peer.clone()),
        },
    ]
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut worst = [0.0f64; 5];
    for trial in 0..100 {
        let (model, x, labels, peer) = random_problem(trial);
        for (slot, kind) in kinds(&peer, trial).iter().enumerate() {
            let err = grad_check(&model, x.view(), &Targets::Hard(&labels), kind, 1e-5).unwrap();
            worst[slot] = worst[slot].max(err);
        }
    }
    println!("worst relative errors: {worst:?}");
    for (slot, w) in worst.iter().enumerate() {
        assert!(*w < 1e-6, "loss kind #{slot}: {w}");
    }
}

#[test]
fn soft_targets_gradient() {
    let (model, x, _, peer) = random_problem(7);
    let err = grad_check(
        &model,
        x.view(),
        &Targets::Soft(peer.view()),
        &LossKind::CrossEntropy,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn softmax_rows_normalized(row in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let k = row.len();
        let m = Array2::from_shape_vec((1, k), row).unwrap();
        let p = softmax(m.view()).unwrap();
        prop_assert!((p.sum() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cross_entropy_nonnegative(row in prop::collection::vec(-30.0f64..30.0, 2..8), pick in 0usize..8) {
        let k = row.len();
        let y = [pick % k];
        let p = softmax(Array2::from_shape_vec((1, k), row).unwrap().view()).unwrap();
        let ce = cross_entropy(p.view(), &Targets::Hard(&y)).unwrap()[0];
        prop_assert!(ce >= 0.0);
        let mut onehot = Array2::zeros((1, k));
        onehot[[0, y[0]]] = 1.0;
        prop_assert_eq!(cross_entropy(onehot.view(), &Targets::Hard(&y)).unwrap()[0], 0.0);
    }
}
