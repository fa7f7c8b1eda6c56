use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::config::{MethodConfig, MethodKind};
use super::transition::TransitionParam;
use crate::dataset::{LabeledDataset, Split};
use crate::error::{LnmError, Result};
use crate::nn::{MlpModel, OptimState};
use crate::rng::{streams, RngState};

/// Learner architecture and optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
        }
    }
}

impl TrainSettings {
    pub fn layer_sizes(&self, d: usize, k: usize) -> Vec<usize> {
        std::iter::once(d)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(k))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(LnmError::config("batch_size must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(LnmError::config("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// The tensors a run trains and evaluates on. Indices refer to rows of the
/// source dataset.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub k: usize,
    pub features: Array2<f64>,
    pub observed: Vec<usize>,
    pub clean: Option<Vec<usize>>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Per-feature std over the training rows, for view jitter.
    pub feature_std: Vec<f64>,
    /// Ground-truth class-conditional transition, when the noise has one.
    pub true_transition: Option<Array2<f64>>,
}

/// Per-feature affine map to zero mean and unit variance, fitted on a set
/// of rows. Constant features are only centred.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Array2<f64>, rows: &[usize]) -> Self {
        if rows.is_empty() {
            let d = features.ncols();
            return Self {
                mean: vec![0.0; d],
                std: vec![1.0; d],
            };
        }
        let sel = features.select(Axis(0), rows);
        let mean = sel.mean_axis(Axis(0)).expect("nonempty rows").to_vec();
        let std = sel
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|&s| if s > 1e-12 { s } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

impl TrainData {
    /// Features are standardized with train-split statistics.
    pub fn from_dataset(ds: &LabeledDataset) -> Self {
        let all: Vec<usize> = (0..ds.n()).collect();
        let train = ds.indices_of(Split::Train);
        let raw = ds.rows_f64(&all);
        let features = Standardizer::fit(&raw, &train).apply(&raw);
        let feature_std = if train.is_empty() {
            vec![0.0; ds.d()]
        } else {
            features.select(Axis(0), &train).std_axis(Axis(0), 0.0).to_vec()
        };
        Self {
            k: ds.k(),
            features,
            observed: ds.observed_labels().to_vec(),
            clean: ds.clean_labels().map(<[usize]>::to_vec),
            train,
            val: ds.indices_of(Split::Val),
            test: ds.indices_of(Split::Test),
            feature_std,
            true_transition: None,
        }
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), idx)
    }

    pub fn observed_at(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.observed[i]).collect()
    }

    /// Labels used to score test accuracy: clean when known.
    pub fn truth_at(&self, idx: &[usize]) -> Vec<usize> {
        let src = self.clean.as_ref().unwrap_or(&self.observed);
        idx.iter().map(|&i| src[i]).collect()
    }

    /// Whether sample `i`'s observed label equals its clean one.
    pub fn is_clean(&self, i: usize) -> Option<bool> {
        self.clean.as_ref().map(|c| c[i] == self.observed[i])
    }
}

/// Samples a strategy treated as clean during one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub epoch: usize,
    pub selected: Vec<usize>,
    /// Excluded samples whose labels were reassigned, with the new label.
    pub purified: Vec<(usize, usize)>,
    /// Selected counts per observed class.
    pub per_class_selected: Vec<usize>,
}

impl SelectionRecord {
    pub fn new(epoch: usize, mut selected: Vec<usize>, mut purified: Vec<(usize, usize)>, data: &TrainData) -> Self {
        selected.sort_unstable();
        selected.dedup();
        purified.sort_unstable();
        purified.dedup_by_key(|p| p.0);
        let mut per_class_selected = vec![0; data.k];
        for &i in &selected {
            per_class_selected[data.observed[i]] += 1;
        }
        Self {
            epoch,
            selected,
            purified,
            per_class_selected,
        }
    }

    /// Uniqueness, range and disjointness checks.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in &self.selected {
            if i >= n || seen[i] {
                return Err(LnmError::precondition(format!(
                    "selection index {i} repeated or out of range"
                )));
            }
            seen[i] = true;
        }
        for &(i, _) in &self.purified {
            if i >= n || seen[i] {
                return Err(LnmError::precondition(format!(
                    "purified index {i} overlaps or out of range"
                )));
            }
            seen[i] = true;
        }
        Ok(())
    }

    /// CSV rows `epoch,index,kind,assigned_label`.
    pub fn csv_rows(&self, observed: &[usize]) -> Vec<[String; 4]> {
        let sel = self.selected.iter().map(|&i| {
            [
                self.epoch.to_string(),
                i.to_string(),
                "selected".to_string(),
                observed[i].to_string(),
            ]
        });
        let pur = self.purified.iter().map(|&(i, y)| {
            [
                self.epoch.to_string(),
                i.to_string(),
                "purified".to_string(),
                y.to_string(),
            ]
        });
        sel.chain(pur).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub selection: Option<SelectionRecord>,
    pub est_error: Option<f64>,
    /// The strategy selected nothing and the epoch fell back to full data.
    pub collapsed: bool,
    /// Mean training loss over flipped and unflipped samples after the epoch.
    pub noisy_loss: Option<f64>,
    pub clean_loss: Option<f64>,
}

/// Everything a strategy carries between epochs.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub kind: MethodKind,
    pub settings: TrainSettings,
    pub model_a: MlpModel,
    pub opt_a: OptimState,
    pub model_b: Option<MlpModel>,
    pub opt_b: Option<OptimState>,
    pub epoch: usize,
    /// Last per-sample training loss seen, indexed like the dataset.
    pub loss_history: Vec<f64>,
    /// Confidence EMA on the observed label (DISC).
    pub confidence: Option<Vec<f64>>,
    /// Clean posterior from the latest mixture fit (DivideMix, model A).
    pub clean_prob: Vec<f64>,
    /// VolMinNet's learned transition.
    pub transition: Option<TransitionParam>,
    /// T-Revision's anchor estimate and its additive slack.
    pub revision_base: Option<Array2<f64>>,
    pub revision_slack: Option<Array2<f64>>,
}

impl TrainState {
    pub fn new(cfg: &MethodConfig, settings: &TrainSettings, data: &TrainData, seed: u64) -> Result<Self> {
        cfg.validate()?;
        settings.validate()?;
        let root = RngState::new(seed);
        let sizes = settings.layer_sizes(data.d(), data.k);
        let model_a = MlpModel::new(&sizes, &mut root.split(streams::INIT_A))?;
        let make_opt =
            |m: &MlpModel| OptimState::new(m, settings.learning_rate, settings.momentum, settings.weight_decay);
        let opt_a = make_opt(&model_a)?;
        let (model_b, opt_b) = if cfg.kind.dual_network() {
            let m = MlpModel::new(&sizes, &mut root.split(streams::INIT_B))?;
            let o = make_opt(&m)?;
            (Some(m), Some(o))
        } else {
            (None, None)
        };
        let n = data.features.nrows();
        Ok(Self {
            kind: cfg.kind,
            settings: settings.clone(),
            model_a,
            opt_a,
            model_b,
            opt_b,
            epoch: 0,
            loss_history: vec![f64::NAN; n],
            confidence: None,
            clean_prob: vec![1.0; n],
            transition: (cfg.kind == MethodKind::VolMinNet)
                .then(|| TransitionParam::new(data.k, cfg.hyper.transition_init_bias)),
            revision_base: None,
            revision_slack: None,
        })
    }
}
