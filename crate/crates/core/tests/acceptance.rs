//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Thresholds marked "frozen" were fixed from a seeded calibration run of
//! the same fixture and are not tuned per run.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use lnm_core::dataset::BlobSpec;
use lnm_core::dataset::ClassHistogram;
use lnm_core::eval::{average_ranks, bvl, clean_ratio, coverage_ratio, rank_methods, AccuracyCurve, Setting};
use lnm_core::harness::{
    emit, run_experiment, sweep, workers_from_env, DatasetConfig, ExperimentConfig, Grid, WORKERS_ENV,
};
use lnm_core::methods::{class_thresholds, keep_schedule, rce_loss, small_loss_select, MethodConfig, MethodKind};
use lnm_core::nn::{cross_entropy, grad_check, loss_and_grad, softmax, LossKind, LossTerms, MlpModel, Targets};
use lnm_core::noise::{apply_matrix, idn_generate_rows, symmetric_matrix, FlipRateLocation, FlipRates, NoiseSpec};
use lnm_core::RngState;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Robust methods must beat CE's last-window accuracy by this much. Frozen at
/// half the smaller seed-averaged gap of the calibration run (0.171 for
/// Co-teaching, 0.314 for DivideMix).
const ROBUST_MARGIN: f64 = 0.085;
/// CE's best-minus-last overfitting gap, in accuracy units.
const CE_OVERFIT_GAP: f64 = 0.10;
/// Estimation error bound for VolMinNet at 30% symmetric noise. Frozen at
/// 1.2 times the calibration run's 0.097.
const VOLMIN_ERROR_BOUND: f64 = 0.117;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_oracle() -> Outcome {
    let k = 3;
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
    for trial in 0..100u64 {
        let mut rng = RngState::new(1000 + trial);
        let model = MlpModel::new(&[4, 3, k], &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 4), |_| StandardNormal.sample(&mut rng));
        let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..k)).collect();
        let peer = softmax(Array2::from_shape_fn((6, k), |_| StandardNormal.sample(&mut rng)).view()).unwrap();
        let mut t = Array2::from_shape_fn((k, k), |(i, j)| if i == j { 2.0 } else { rng.random::<f64>() });
        for mut row in t.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let kinds = [
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
                    ce: 1.0,
                    rce: 1.0,
                    neg_entropy: 1.0,
                    sq_err: 25.0,
                    sym_kl: 0.3,
                    ..LossTerms::default()
                },
                row_weights: Some((0..6).map(|i| 1.0 + i as f64 / 6.0).collect()),
                peer: Some(peer),
            },
        ];
        for kind in &kinds {
            let e = grad_check(&model, x.view(), &Targets::Hard(&y), kind, 1e-5).unwrap();
            let w = worst.entry(kind.name()).or_insert(0.0);
            *w = w.max(e);
        }
    }
    let pass = worst.values().all(|&e| e < 1e-6);
    let detail = worst
        .iter()
        .map(|(k, e)| format!("{k} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("worst relative error per loss: {detail}"))
}

fn noise_rate_convergence() -> Outcome {
    let n = 20_000;
    let k = 5;
    let mut rng = RngState::new(7);
    let clean: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let x = Array2::from_shape_fn((n, 8), |_| StandardNormal.sample(&mut rng));
    let reference = MlpModel::new(&[8, 16, k], &mut rng).unwrap();
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for eta in [0.2, 0.5, 0.9] {
        let sym = apply_matrix(&clean, &symmetric_matrix(eta, k).unwrap(), &mut RngState::new(11)).unwrap();
        let flip = FlipRates {
            mean: eta,
            std: 0.1,
            location: FlipRateLocation::MeanMatched,
        };
        let idn = idn_generate_rows(x.view(), &clean, &reference, &flip, &mut RngState::new(12)).unwrap();
        worst = worst
            .max((sym.realized_rate - eta).abs())
            .max((idn.realized_rate - eta).abs());
        lines.push(format!(
            "{eta}: sym {:.4} idn {:.4}",
            sym.realized_rate, idn.realized_rate
        ));
    }
    outcome(
        worst <= 0.02,
        format!("{} (max deviation {worst:.4})", lines.join("; ")),
    )
}

fn flip_branch_masking() -> Outcome {
    let n = 100_000;
    let k = 4;
    let mut rng = RngState::new(21);
    let clean: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let x = Array2::from_shape_fn((n, 3), |_| StandardNormal.sample(&mut rng));
    let reference = MlpModel::new(&[3, 8, k], &mut rng).unwrap();
    // q = 1 routes every sample through the flip branch
    let always = FlipRates {
        mean: 1.0,
        std: 0.0,
        location: FlipRateLocation::MeanMatched,
    };
    let out = idn_generate_rows(x.view(), &clean, &reference, &always, &mut rng).unwrap();
    let kept = out.observed_labels.iter().zip(&clean).filter(|(a, b)| a == b).count();
    outcome(
        kept == 0,
        format!("{kept} of {n} flip-branch draws kept the true label"),
    )
}

fn blobs(classes: usize, per_class: usize, center_box: f64) -> DatasetConfig {
    let mut spec = BlobSpec::new(classes, per_class, 16, 1.0);
    spec.center_box = center_box;
    DatasetConfig::blobs(spec)
}

fn volmin_config(center_box: f64, rate: f64, seed: u64) -> ExperimentConfig {
    let mut method = MethodConfig::new(MethodKind::VolMinNet);
    method.hyper.transition_lr = 0.1;
    method.hyper.volmin_lambda = 1e-2;
    let mut cfg = ExperimentConfig::new(
        blobs(3, 1000, center_box),
        NoiseSpec::symmetric(rate),
        method,
        60,
        vec![seed],
    );
    cfg.train.batch_size = 32;
    cfg.train.weight_decay = 5e-3;
    cfg
}

fn final_error_and_accuracy(cfg: &ExperimentConfig) -> (f64, f64) {
    let rec = run_experiment(cfg, cfg.seeds[0]).unwrap();
    let last = rec.reports.last().unwrap();
    (last.est_error.unwrap(), last.test_acc)
}

fn transition_recovery() -> Outcome {
    let (err30, _) = final_error_and_accuracy(&volmin_config(2.5, 0.3, 1));
    let (err_lo, acc_lo) = final_error_and_accuracy(&volmin_config(1.0, 0.2, 1));
    let (err_hi, acc_hi) = final_error_and_accuracy(&volmin_config(1.0, 0.5, 1));
    let anti = (err_lo - err_hi) * (acc_lo - acc_hi) < 0.0;
    outcome(
        err30 < VOLMIN_ERROR_BOUND && anti,
        format!(
            "sym-30% error {err30:.3} (bound {VOLMIN_ERROR_BOUND}); \
             sym-20% error {err_lo:.3} acc {acc_lo:.3}, sym-50% error {err_hi:.3} acc {acc_hi:.3}"
        ),
    )
}

fn selection_oracle() -> Outcome {
    let mut rng = RngState::new(31);
    let mut failures = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..200);
        let clean_mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let n_clean = clean_mask.iter().filter(|&&c| c).count();
        if n_clean == 0 {
            continue;
        }
        let losses: Vec<f64> = clean_mask
            .iter()
            .map(|&c| {
                if c {
                    rng.random::<f64>()
                } else {
                    2.0 + rng.random::<f64>()
                }
            })
            .collect();
        let m = rng.random_range(1..=n_clean);
        let keep = m as f64 / n as f64;
        let sel = small_loss_select(&losses, keep).unwrap();
        let cr = clean_ratio(&sel, &clean_mask).unwrap();
        let cov = coverage_ratio(&sel, &clean_mask).unwrap();
        let expected = m as f64 / n_clean as f64;
        if cr != 1.0 || cov != expected {
            failures += 1;
        }
    }
    // the keep schedule at full ramp equals 1 − η
    let schedule_ok = keep_schedule(50.0, 0.4, 10.0) == 0.6 && keep_schedule(0.0, 0.4, 10.0) == 1.0;
    outcome(
        failures == 0 && schedule_ok,
        format!("{failures} mismatches in 500 constructed cases"),
    )
}

fn overfit_fixture(method: MethodKind, seeds: Vec<u64>, epochs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        blobs(5, 200, 3.0),
        NoiseSpec::symmetric(0.4),
        MethodConfig::new(method),
        epochs,
        seeds,
    );
    cfg.train.batch_size = 32;
    cfg.train.hidden = vec![256, 256];
    cfg
}

fn memorization_ordering() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = 0;
    for seed in [1, 2, 3] {
        let rec = run_experiment(&overfit_fixture(MethodKind::Ce, vec![seed], 5), seed).unwrap();
        let holds = rec
            .reports
            .iter()
            .all(|r| r.noisy_loss.unwrap() > r.clean_loss.unwrap());
        ok += usize::from(holds);
        let first = &rec.reports[0];
        lines.push(format!(
            "seed {seed}: epoch-1 noisy {:.3} vs clean {:.3}",
            first.noisy_loss.unwrap(),
            first.clean_loss.unwrap()
        ));
    }
    outcome(ok == 3, format!("{ok}/3 seeds; {}", lines.join("; ")))
}

fn robust_gap() -> Outcome {
    let seeds = vec![1, 2, 3];
    let mut mean_last = BTreeMap::new();
    let mut ce_gaps = Vec::new();
    for kind in [MethodKind::Ce, MethodKind::CoTeaching, MethodKind::DivideMix] {
        let cfg = overfit_fixture(kind, seeds.clone(), 60);
        let mut total = 0.0;
        for &seed in &seeds {
            let rec = run_experiment(&cfg, seed).unwrap();
            total += rec.summary.last;
            if kind == MethodKind::Ce {
                ce_gaps.push(rec.summary.best - rec.summary.last);
            }
        }
        mean_last.insert(kind, total / seeds.len() as f64);
    }
    let ce = mean_last[&MethodKind::Ce];
    let ct = mean_last[&MethodKind::CoTeaching];
    let dm = mean_last[&MethodKind::DivideMix];
    let pass = ct - ce >= ROBUST_MARGIN && dm - ce >= ROBUST_MARGIN && ce_gaps.iter().all(|&g| g >= CE_OVERFIT_GAP);
    let gaps = ce_gaps.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>().join("/");
    outcome(
        pass,
        format!("mean L: ce {ce:.3}, coteaching {ct:.3}, dividemix {dm:.3} (margin {ROBUST_MARGIN}); ce B-L per seed {gaps}"),
    )
}

fn imbalance_coverage() -> Outcome {
    // overlapping classes so the tail is hard to fit
    let mut ds = blobs(5, 1000, 1.5);
    ds.long_tail = Some(100.0);
    let mut ok = 0;
    let mut lines = Vec::new();
    for seed in [1, 2, 3] {
        let cfg = ExperimentConfig::new(
            ds.clone(),
            NoiseSpec::instance_dependent(0.2),
            MethodConfig::new(MethodKind::CoTeaching),
            30,
            vec![seed],
        );
        let rec = run_experiment(&cfg, seed).unwrap();
        let counts = &rec.train_class_counts;
        let smallest = (0..counts.len()).min_by_key(|&c| (counts[c], c)).unwrap();
        let largest = (0..counts.len())
            .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
            .unwrap();
        let per_class = &rec
            .selection_metrics
            .last()
            .unwrap()
            .as_ref()
            .unwrap()
            .per_class_coverage;
        let (lo, hi) = (per_class[smallest], per_class[largest]);
        let holds = matches!((lo, hi), (Some(a), Some(b)) if a < b);
        ok += usize::from(holds);
        lines.push(format!(
            "seed {seed}: class {smallest} ({} train) {lo:.3?} vs class {largest} ({}) {hi:.3?}",
            counts[smallest], counts[largest]
        ));
    }
    outcome(ok == 3, format!("{ok}/3 seeds; {}", lines.join("; ")))
}

fn medssl_formulas() -> Outcome {
    let two = class_thresholds(&ClassHistogram { counts: vec![10, 1000] }, 0.9, 0.5, 1e-12).unwrap();
    let three = class_thresholds(
        &ClassHistogram {
            counts: vec![10, 100, 1000],
        },
        0.9,
        0.6,
        1e-12,
    )
    .unwrap();
    let thresholds_ok = two[0] == 0.9
        && (two[1] - 0.5).abs() < 1e-9
        && three[0] == 0.9
        && (three[1] - 0.75).abs() < 1e-9
        && (three[2] - 0.6).abs() < 1e-9;

    let probs = ndarray::array![[0.7, 0.2, 0.1], [0.1, 0.3, 0.6], [0.25, 0.5, 0.25]];
    let y = [0usize, 1, 2];
    let ce = cross_entropy(probs.view(), &Targets::Hard(&y)).unwrap();
    let onehot = Targets::Hard(&y).to_distribution(3).unwrap();
    let rce = rce_loss(probs.view(), onehot.view()).unwrap();
    let combined = LossKind::Custom {
        terms: LossTerms {
            ce: 1.0,
            rce: 1.0,
            ..LossTerms::default()
        },
        row_weights: None,
        peer: None,
    };
    // losses of a model whose output is exactly `probs`
    let logits = probs.mapv(f64::ln);
    let model = identity_model(&logits);
    let eye = Array2::eye(3);
    let lg = loss_and_grad(&model, eye.view(), &Targets::Hard(&y), &combined).unwrap();
    let additive = (0..3).all(|i| (lg.per_sample[i] - (ce[i] + rce[i])).abs() <= 1e-15 * (ce[i] + rce[i]).max(1.0));
    outcome(
        thresholds_ok && additive,
        format!("thresholds [10,1000] -> {two:?}; [10,100,1000] -> {three:?}; clean-set loss additive: {additive}"),
    )
}

/// A one-layer net that maps the i-th unit vector to `logits` row i.
fn identity_model(logits: &Array2<f64>) -> MlpModel {
    use lnm_core::nn::Dense;
    let layer = Dense {
        weights: logits.clone(),
        bias: ndarray::Array1::zeros(logits.ncols()),
    };
    MlpModel::from_layers(vec![layer]).unwrap()
}

fn brute_bvl(points: &[(f64, f64)], w: usize) -> (f64, f64, f64) {
    let mut best = points[0].1;
    for p in points {
        if p.1 > best {
            best = p.1;
        }
    }
    let max_val = points.iter().map(|p| p.0).fold(f64::MIN, f64::max);
    let v = points.iter().find(|p| p.0 == max_val).unwrap().1;
    let mut sum = 0.0;
    for p in &points[points.len() - w..] {
        sum += p.1;
    }
    (best, v, sum / w as f64)
}

fn bvl_and_ranking() -> Outcome {
    let mut rng = RngState::new(41);
    let mut bvl_bad = 0;
    for _ in 0..1000 {
        let e = rng.random_range(1..40);
        let w = rng.random_range(1..=e);
        // coarse grid so that ties are common
        let points: Vec<(f64, f64)> = (0..e)
            .map(|_| {
                (
                    rng.random_range(0..20) as f64 / 20.0,
                    rng.random_range(0..20) as f64 / 20.0,
                )
            })
            .collect();
        let s = bvl(&AccuracyCurve::new(points.clone()).unwrap(), w).unwrap();
        if (s.best, s.val_selected, s.last) != brute_bvl(&points, w) {
            bvl_bad += 1;
        }
    }
    let mut rank_bad = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..6);
        let patterns = rng.random_range(1..4);
        let per = rng.random_range(1..4);
        let mut scores = BTreeMap::new();
        for p in 0..patterns {
            for s in 0..per {
                for i in 0..m {
                    let v = rng.random_range(0..4) as f64 / 4.0;
                    scores.insert((format!("m{i}"), Setting::new(format!("p{p}"), format!("s{s}"))), v);
                }
            }
        }
        let table = rank_methods(&scores).unwrap();
        for (mi, method) in table.methods.iter().enumerate() {
            let mut pattern_means = Vec::new();
            for p in 0..patterns {
                let mut total = 0.0;
                for s in 0..per {
                    let setting = Setting::new(format!("p{p}"), format!("s{s}"));
                    let mine = scores[&(method.clone(), setting.clone())];
                    let col: Vec<f64> = table
                        .methods
                        .iter()
                        .map(|o| scores[&(o.clone(), setting.clone())])
                        .collect();
                    let better = col.iter().filter(|&&v| v > mine).count() as f64;
                    let equal = col.iter().filter(|&&v| v == mine).count() as f64;
                    total += better + (equal + 1.0) / 2.0;
                }
                pattern_means.push(total / per as f64);
            }
            let overall = pattern_means.iter().sum::<f64>() / patterns as f64;
            if table.pattern_means[mi] != pattern_means || table.overall[mi] != overall {
                rank_bad += 1;
            }
        }
    }
    let ties_ok = average_ranks(&[0.9, 0.8, 0.9]) == vec![1.5, 3.0, 1.5];
    outcome(
        bvl_bad == 0 && rank_bad == 0 && ties_ok,
        format!("{bvl_bad} bvl and {rank_bad} ranking mismatches over 1000 random cases each"),
    )
}

fn determinism() -> Outcome {
    let mut cfg = overfit_fixture(MethodKind::Ce, vec![1, 2], 8);
    cfg.dataset = blobs(3, 60, 2.0);
    cfg.train.batch_size = 16;
    cfg.train.hidden = vec![16];
    cfg.grid = Some(Grid {
        methods: [MethodKind::Ce, MethodKind::CoTeaching, MethodKind::DivideMix]
            .map(MethodConfig::new)
            .to_vec(),
        noise: vec![NoiseSpec::symmetric(0.2), NoiseSpec::instance_dependent(0.2)],
    });
    let mut outputs = Vec::new();
    for workers in ["1", "4"] {
        std::env::set_var(WORKERS_ENV, workers);
        let result = sweep(&cfg, workers_from_env().unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit(
            dir.path(),
            &result.records(),
            &result.manifest(&cfg),
            result.rank.as_ref().ok(),
        )
        .unwrap();
        outputs.push(std::fs::read(dir.path().join("results.csv")).unwrap());
    }
    std::env::remove_var(WORKERS_ENV);
    let same = outputs[0] == outputs[1] && !outputs[0].is_empty();
    outcome(
        same,
        format!(
            "results.csv {} bytes with 1 worker, {} with 4; identical: {same}",
            outputs[0].len(),
            outputs[1].len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient oracle", gradient_oracle, Duration::from_secs(30)),
        (
            "noise-rate convergence",
            noise_rate_convergence,
            Duration::from_secs(10),
        ),
        ("flip-branch masking", flip_branch_masking, Duration::from_secs(60)),
        ("transition recovery", transition_recovery, Duration::from_secs(300)),
        ("selection oracle", selection_oracle, Duration::from_secs(60)),
        ("memorization ordering", memorization_ordering, Duration::from_secs(120)),
        ("robust-method gap", robust_gap, Duration::from_secs(900)),
        ("imbalance coverage", imbalance_coverage, Duration::from_secs(600)),
        ("medssl formulas", medssl_formulas, Duration::from_secs(60)),
        ("bvl and ranking", bvl_and_ranking, Duration::from_secs(60)),
        ("determinism", determinism, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let pass = out.pass && took <= budget;
        failed += usize::from(!pass);
        println!(
            "{} {name}: {} [{:.1}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
