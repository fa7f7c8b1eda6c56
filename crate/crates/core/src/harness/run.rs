use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::emit::ResultRow;
use crate::dataset::{class_histogram, load_flat, long_tail, stratified_split, LabeledDataset, Split};
use crate::error::{LnmError, Result};
use crate::eval::{bvl, per_class_accuracy, selection_metrics, AccuracyCurve, CheckpointSummary, SelectionMetrics};
use crate::methods::{run_epoch, EpochReport, MethodConfig, MethodKind, Standardizer, TrainData, TrainState};
use crate::nn::MlpModel;
use crate::noise::{apply_matrix, idn_generate_rows, NoiseKind, NoiseOutcome, ReferenceSource};
use crate::rng::{streams, RngState};

/// Labels drawn for one split, keyed by dataset row.
#[derive(Clone, Debug)]
pub struct SplitNoise {
    pub indices: Vec<usize>,
    pub clean: Vec<usize>,
    pub outcome: NoiseOutcome,
}

impl SplitNoise {
    /// Writes `index,clean,observed,flipped,q` with dataset row indices.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "clean", "observed", "flipped", "q"])?;
        for (pos, &i) in self.indices.iter().enumerate() {
            let q = self
                .outcome
                .flip_rates
                .as_ref()
                .map(|q| q[pos].to_string())
                .unwrap_or_default();
            w.write_record([
                i.to_string(),
                self.clean[pos].to_string(),
                self.outcome.observed_labels[pos].to_string(),
                u8::from(self.outcome.flipped[pos]).to_string(),
                q,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A dataset ready for training, plus the record of the noise drawn for it.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub dataset: LabeledDataset,
    pub train_noise: Option<SplitNoise>,
    pub val_noise: Option<SplitNoise>,
    /// Class-conditional ground truth, when the noise has one.
    pub true_transition: Option<ndarray::Array2<f64>>,
}

impl PreparedData {
    pub fn train_data(&self) -> TrainData {
        let mut data = TrainData::from_dataset(&self.dataset);
        data.true_transition = self.true_transition.clone();
        data
    }
}

/// Builds or loads the samples, splits them and applies the long-tail
/// reduction to the train split. No noise is drawn.
pub fn build_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<LabeledDataset> {
    let root = RngState::new(seed);
    let d = &cfg.dataset;
    let mut ds = match (&d.blobs, &d.path) {
        (Some(spec), None) => spec.generate(&mut root.split(streams::DATA))?,
        (None, Some(path)) => load_flat(path)?,
        _ => return Err(LnmError::config("dataset needs exactly one of `blobs` or `path`")),
    };
    let has = |ds: &LabeledDataset, s| ds.split_tags().contains(&s);
    if !(has(&ds, Split::Val) && has(&ds, Split::Test)) {
        let [a, b, c] = d.fractions;
        ds = stratified_split(&ds, (a, b, c), &mut root.split(streams::SPLIT))?;
    }
    if let Some(r) = d.long_tail {
        ds = long_tail(
            &ds,
            r,
            d.class_order,
            Some(Split::Train),
            &mut root.split(streams::LONG_TAIL),
        )?;
    }
    Ok(ds)
}

/// Trains the classifier whose confusions drive instance-dependent noise.
/// It sees features standardized with its own training rows.
fn train_reference(
    ds: &LabeledDataset,
    rows: &[usize],
    clean: &[usize],
    cfg: &ExperimentConfig,
    rng: &RngState,
) -> Result<(MlpModel, Standardizer)> {
    if rows.is_empty() {
        return Err(LnmError::precondition("reference classifier has no training samples"));
    }
    let m = rows.len();
    let all: Vec<usize> = (0..m).collect();
    let labels: Vec<usize> = rows.iter().map(|&i| clean[i]).collect();
    let raw = ds.rows_f64(rows);
    let scaler = Standardizer::fit(&raw, &all);
    let data = TrainData {
        k: ds.k(),
        features: scaler.apply(&raw),
        observed: labels.clone(),
        clean: Some(labels),
        train: all.clone(),
        val: all.clone(),
        test: all,
        feature_std: vec![0.0; ds.d()],
        true_transition: None,
    };
    let method = MethodConfig::new(MethodKind::Ce);
    let mut state = TrainState::new(&method, &cfg.train, &data, rng.split(0).next_u64())?;
    let mut train_rng = rng.split(1);
    for _ in 0..cfg.noise.reference.epochs {
        run_epoch(&mut state, &data, &method, &mut train_rng)?;
    }
    Ok((state.model_a, scaler))
}

/// Full data pipeline: build, split, long-tail, then inject noise into the
/// train split (and val unless clean validation is requested). Test labels
/// are always clean.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let root = RngState::new(seed);
    let mut ds = build_dataset(cfg, seed)?;
    let spec = &cfg.noise;
    let noise_root = RngState::new(spec.seed.unwrap_or(seed));
    let Some(clean) = ds.clean_labels().map(<[usize]>::to_vec) else {
        if spec.kind != NoiseKind::None {
            return Err(LnmError::config("synthetic noise needs clean labels in the dataset"));
        }
        return Ok(PreparedData {
            dataset: ds,
            train_noise: None,
            val_noise: None,
            true_transition: None,
        });
    };

    let mut reference = None;
    if spec.kind == NoiseKind::InstanceDependent {
        let ref_rng = root.split(streams::REFERENCE);
        let pool = match spec.reference.source {
            ReferenceSource::Test => ds.indices_of(Split::Test),
            ReferenceSource::TrainHoldout => {
                let mut train = ds.indices_of(Split::Train);
                train.shuffle(&mut ref_rng.split(2));
                let take = ((train.len() as f64) * spec.reference.fraction).round() as usize;
                let mut holdout = train[..take].to_vec();
                holdout.sort_unstable();
                holdout
            }
        };
        reference = Some(train_reference(&ds, &pool, &clean, cfg, &ref_rng)?);
        if spec.reference.source == ReferenceSource::TrainHoldout {
            // the holdout saw its clean labels; it never joins training
            let mut drop = vec![false; ds.n()];
            pool.iter().for_each(|&i| drop[i] = true);
            let keep: Vec<usize> = (0..ds.n()).filter(|&i| !drop[i]).collect();
            ds = ds.subset(&keep);
        }
    }
    let clean = ds.clean_labels().expect("checked above").to_vec();
    let transition = spec.transition(ds.k())?;

    let draw = |split: Split, stream: u64| -> Result<Option<SplitNoise>> {
        if spec.kind == NoiseKind::None {
            return Ok(None);
        }
        let indices = ds.indices_of(split);
        let split_clean: Vec<usize> = indices.iter().map(|&i| clean[i]).collect();
        let mut rng = noise_root.split(stream);
        let outcome = match (&transition, &reference) {
            (Some(t), _) => apply_matrix(&split_clean, t, &mut rng)?,
            (None, Some((model, scaler))) => {
                let x = scaler.apply(&ds.rows_f64(&indices));
                idn_generate_rows(x.view(), &split_clean, model, &spec.flip_rates(), &mut rng)?
            }
            (None, None) => unreachable!("instance-dependent noise always trains a reference"),
        };
        Ok(Some(SplitNoise {
            indices,
            clean: split_clean,
            outcome,
        }))
    };
    let train_noise = draw(Split::Train, streams::NOISE_TRAIN)?;
    let val_noise = if cfg.clean_validation {
        None
    } else {
        draw(Split::Val, streams::NOISE_VAL)?
    };

    let mut observed = ds.observed_labels().to_vec();
    for noise in [&train_noise, &val_noise].into_iter().flatten() {
        for (pos, &i) in noise.indices.iter().enumerate() {
            observed[i] = noise.outcome.observed_labels[pos];
        }
    }
    let tags = ds.split_tags().to_vec();
    for i in 0..ds.n() {
        let reset = match tags[i] {
            Split::Test => true,
            Split::Val => cfg.clean_validation,
            Split::Train => false,
        };
        if reset {
            observed[i] = clean[i];
        }
    }
    let ds = ds.with_observed_labels(observed)?;
    assert_test_integrity(&ds)?;
    Ok(PreparedData {
        dataset: ds,
        train_noise,
        val_noise,
        true_transition: transition
            .filter(|_| spec.kind != NoiseKind::None)
            .map(|t| t.entries().clone()),
    })
}

fn assert_test_integrity(ds: &LabeledDataset) -> Result<()> {
    let Some(clean) = ds.clean_labels() else {
        return Ok(());
    };
    for i in ds.indices_of(Split::Test) {
        if clean[i] != ds.observed_labels()[i] {
            return Err(LnmError::precondition(format!(
                "test sample {i} carries a corrupted label"
            )));
        }
    }
    Ok(())
}

/// Everything one (config, seed) run produced.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    pub noise_kind: NoiseKind,
    pub noise_rate: f64,
    pub rows: Vec<ResultRow>,
    pub reports: Vec<EpochReport>,
    pub selection_metrics: Vec<Option<SelectionMetrics>>,
    pub curve: AccuracyCurve,
    pub summary: CheckpointSummary,
    /// Final-epoch test accuracy per clean class.
    pub per_class_test_accuracy: Vec<Option<f64>>,
    /// Clean-label histogram of the training split.
    pub train_class_counts: Vec<usize>,
    pub train_noise: Option<SplitNoise>,
    /// Observed labels of every dataset row the run trained on.
    pub observed_labels: Vec<usize>,
}

/// Short summary stored in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    pub noise_kind: NoiseKind,
    pub noise_rate: f64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<CheckpointSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized_train_noise: Option<f64>,
    pub collapsed_epochs: usize,
}

pub fn default_run_id(cfg: &ExperimentConfig, seed: u64) -> String {
    format!(
        "{}-{}{}-s{}",
        cfg.method.label(),
        cfg.noise.kind.as_str(),
        cfg.noise.rate,
        seed
    )
}

pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    run_experiment_with_id(cfg, seed, default_run_id(cfg, seed))
}

pub fn run_experiment_with_id(cfg: &ExperimentConfig, seed: u64, run_id: String) -> Result<RunRecord> {
    cfg.validate()?;
    let prepared = prepare_data(cfg, seed)?;
    let data = prepared.train_data();
    let method = cfg.effective_method();
    let mut state = TrainState::new(&method, &cfg.train, &data, seed)?;
    let mut rng = RngState::new(seed).split(streams::TRAIN);
    let label = method.label();

    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let report = run_epoch(&mut state, &data, &method, &mut rng)?;
        let sel = match (&report.selection, &data.clean) {
            (Some(s), Some(clean)) => Some(selection_metrics(
                &s.selected,
                &data.train,
                clean,
                &data.observed,
                data.k,
            )?),
            _ => None,
        };
        rows.push(ResultRow {
            run_id: run_id.clone(),
            seed,
            method: label.clone(),
            noise_kind: cfg.noise.kind.as_str().to_string(),
            noise_rate: cfg.noise.rate,
            epoch: report.epoch,
            train_loss: report.train_loss,
            val_acc: report.val_acc,
            test_acc: report.test_acc,
            clean_ratio: sel.as_ref().and_then(|m| m.clean_ratio),
            coverage_ratio: sel.as_ref().and_then(|m| m.coverage_ratio),
            est_error: report.est_error,
        });
        metrics.push(sel);
        reports.push(report);
    }
    let curve = AccuracyCurve::new(reports.iter().map(|r| (r.val_acc, r.test_acc)).collect())?;
    let summary = bvl(&curve, cfg.last_window)?;
    let test_pred = state.predict(&data.rows(&data.test))?;
    let per_class_test_accuracy = per_class_accuracy(&test_pred, &data.truth_at(&data.test), data.k)?;
    let train_class_counts = class_histogram(&data.truth_at(&data.train), data.k)?.counts;
    Ok(RunRecord {
        run_id,
        seed,
        method: label,
        noise_kind: cfg.noise.kind,
        noise_rate: cfg.noise.rate,
        rows,
        reports,
        selection_metrics: metrics,
        curve,
        summary,
        per_class_test_accuracy,
        train_class_counts,
        train_noise: prepared.train_noise,
        observed_labels: data.observed.clone(),
    })
}

impl RunRecord {
    pub fn run_summary(&self) -> RunSummary {
        RunSummary {
            run_id: self.run_id.clone(),
            seed: self.seed,
            method: self.method.clone(),
            noise_kind: self.noise_kind,
            noise_rate: self.noise_rate,
            ok: true,
            error: None,
            summary: Some(self.summary),
            realized_train_noise: self.train_noise.as_ref().map(|n| n.outcome.realized_rate),
            collapsed_epochs: self.reports.iter().filter(|r| r.collapsed).count(),
        }
    }

    /// Selection rows `epoch,index,kind,assigned_label` across all epochs.
    pub fn write_selection_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "index", "kind", "assigned_label"])?;
        for sel in self.reports.iter().filter_map(|r| r.selection.as_ref()) {
            for row in sel.csv_rows(&self.observed_labels) {
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
