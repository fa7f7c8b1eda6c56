use lnm_core::dataset::BlobSpec;
use lnm_core::dataset::ClassHistogram;
use lnm_core::harness::{prepare_data, DatasetConfig, ExperimentConfig};
use lnm_core::methods::{
    class_thresholds, gmm2_fit, run_epoch, MedSslToggles, MethodConfig, MethodKind, TrainData, TrainSettings,
    TrainState,
};
use lnm_core::noise::{estimation_error, NoiseSpec};
use lnm_core::RngState;
use ndarray::Array2;
use proptest::prelude::*;

fn fixture(noise: NoiseSpec, seed: u64) -> TrainData {
    let mut spec = BlobSpec::new(3, 100, 8, 1.0);
    spec.center_box = 3.0;
    let cfg = ExperimentConfig::new(
        DatasetConfig::blobs(spec),
        noise,
        MethodConfig::new(MethodKind::Ce),
        1,
        vec![seed],
    );
    prepare_data(&cfg, seed).unwrap().train_data()
}

fn settings() -> TrainSettings {
    TrainSettings {
        hidden: vec![32],
        batch_size: 32,
        ..TrainSettings::default()
    }
}

fn train(
    cfg: &MethodConfig,
    data: &TrainData,
    epochs: usize,
    seed: u64,
    mut each: impl FnMut(&TrainState, &lnm_core::methods::EpochReport),
) {
    let mut state = TrainState::new(cfg, &settings(), data, seed).unwrap();
    let mut rng = RngState::new(seed).split(77);
    for _ in 0..epochs {
        let report = run_epoch(&mut state, data, cfg, &mut rng).unwrap();
        each(&state, &report);
    }
}

#[test]
fn every_method_keeps_invariants() {
    let data = fixture(NoiseSpec::symmetric(0.3), 5);
    let n = data.features.nrows();
    let mut kinds: Vec<MethodConfig> = MethodKind::ALL
        .iter()
        .map(|&k| MethodConfig::new(k).with_noise_rate(0.3))
        .collect();
    for kind in [MethodKind::DivideMix, MethodKind::Disc] {
        let mut cfg = MethodConfig::new(kind).with_noise_rate(0.3);
        cfg.medssl = MedSslToggles::all();
        kinds.push(cfg);
    }
    for mut cfg in kinds {
        cfg.warm_up_epochs = 2;
        train(&cfg, &data, 5, 3, |state, report| {
            assert!(report.train_loss.is_finite(), "{}", cfg.label());
            assert!(
                data.train.iter().all(|&i| state.loss_history[i].is_finite()),
                "{}",
                cfg.label()
            );
            if let Some(sel) = &report.selection {
                sel.validate(n).unwrap();
                let purified: Vec<usize> = sel.purified.iter().map(|p| p.0).collect();
                assert!(sel.selected.iter().all(|i| !purified.contains(i)));
            }
            if let Some(t) = &state.transition {
                for row in t.matrix().rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-9);
                    assert!(row.iter().all(|&v| v >= 0.0));
                }
            }
        });
    }
}

#[test]
fn coteaching_without_noise_covers_all_training_samples() {
    let data = fixture(NoiseSpec::none(), 2);
    let cfg = MethodConfig::new(MethodKind::CoTeaching).with_noise_rate(0.0);
    let mut last = None;
    train(&cfg, &data, 3, 2, |_, report| last = report.selection.clone());
    let sel = last.unwrap();
    assert_eq!(sel.selected, data.train);
}

#[test]
fn dividemix_posteriors_split_bimodal_losses() {
    let mut losses = vec![0.05; 60];
    losses.extend(vec![2.5; 40]);
    for (i, l) in losses.iter_mut().enumerate() {
        *l += (i % 7) as f64 * 1e-3;
    }
    let fit = gmm2_fit(&losses).unwrap();
    let clean = fit.clean_set(0.5);
    assert_eq!(clean, (0..60).collect::<Vec<_>>());
}

#[test]
fn disc_relabels_with_its_own_prediction() {
    let data = fixture(NoiseSpec::symmetric(0.4), 4);
    let mut cfg = MethodConfig::new(MethodKind::Disc).with_noise_rate(0.4);
    cfg.warm_up_epochs = 2;
    // without jitter both views equal the clean features
    cfg.hyper.jitter_scale = 0.0;
    let mut state = TrainState::new(&cfg, &settings(), &data, 4).unwrap();
    let mut rng = RngState::new(4);
    let mut checked = 0;
    for _ in 0..6 {
        let before = state.model_a.clone();
        let report = run_epoch(&mut state, &data, &cfg, &mut rng).unwrap();
        let Some(sel) = report.selection else { continue };
        if sel.purified.is_empty() {
            continue;
        }
        let idx: Vec<usize> = sel.purified.iter().map(|p| p.0).collect();
        let pred = before.predict_proba(data.rows(&idx).view()).unwrap();
        for (row, &(_, label)) in pred.rows().into_iter().zip(&sel.purified) {
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(label, argmax);
        }
        checked += 1;
    }
    assert!(checked > 0, "no purified samples produced");
}

#[test]
fn trevision_anchor_estimate_beats_identity() {
    let data = fixture(NoiseSpec::symmetric(0.3), 6);
    let mut cfg = MethodConfig::new(MethodKind::TRevision).with_noise_rate(0.3);
    cfg.warm_up_epochs = 8;
    let truth = data.true_transition.clone().unwrap();
    let identity_error = estimation_error(&Array2::eye(3), &truth).unwrap();
    let mut first = None;
    train(&cfg, &data, 9, 6, |_, report| {
        if first.is_none() {
            first = report.est_error;
        }
    });
    let err = first.expect("no estimate after warm-up");
    assert!(err < identity_error, "{err} vs identity {identity_error}");
}

#[test]
fn volmin_estimate_is_row_stochastic_and_reported() {
    let data = fixture(NoiseSpec::symmetric(0.2), 8);
    let cfg = MethodConfig::new(MethodKind::VolMinNet);
    train(&cfg, &data, 3, 8, |state, report| {
        let t = state.transition.as_ref().unwrap().matrix();
        assert!(t.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9));
        assert!(report.est_error.is_some());
    });
}

#[test]
fn runs_repeat_bitwise() {
    let data = fixture(NoiseSpec::symmetric(0.3), 9);
    let cfg = MethodConfig::new(MethodKind::JoCoR).with_noise_rate(0.3);
    let mut a = Vec::new();
    let mut b = Vec::new();
    train(&cfg, &data, 3, 9, |s, _| a.push(s.model_a.clone()));
    train(&cfg, &data, 3, 9, |s, _| b.push(s.model_a.clone()));
    assert_eq!(a, b);
}

#[test]
fn blobs_are_learnable_by_plain_training() {
    let mut spec = BlobSpec::new(5, 100, 16, 1.0);
    spec.center_box = 3.0;
    let cfg = ExperimentConfig::new(
        DatasetConfig::blobs(spec),
        NoiseSpec::none(),
        MethodConfig::new(MethodKind::Ce),
        30,
        vec![1],
    );
    let data = prepare_data(&cfg, 1).unwrap().train_data();
    let mut acc = 0.0;
    train(&cfg.method, &data, 30, 1, |_, r| acc = r.test_acc);
    assert!(acc >= 0.95, "{acc}");
}

proptest! {
    #[test]
    fn class_thresholds_bounded_and_monotone(
        counts in proptest::collection::vec(1usize..5000, 2..8),
        head in 0.5f64..1.0,
        tail in 0.1f64..1.0,
    ) {
        let t = class_thresholds(&ClassHistogram { counts: counts.clone() }, head, tail, 1e-12).unwrap();
        let (lo, hi) = (head.min(tail), head.max(tail));
        for &v in &t {
            prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-12);
        }
        for i in 0..counts.len() {
            for j in 0..counts.len() {
                if counts[i] < counts[j] {
                    // rarer classes sit closer to the head threshold
                    prop_assert!((t[i] - head).abs() <= (t[j] - head).abs() + 1e-12);
                }
            }
        }
    }
}
