//! Python bindings: datasets, noise injection, the MLP, selection primitives,
//! metrics and whole experiment runs.
//!
//! Matrices cross the boundary as lists of rows.

use std::collections::BTreeMap;

use lnm_core::dataset::{self, BlobSpec, ClassHistogram, ClassOrder, LabeledDataset, Split};
use lnm_core::eval::{self, AccuracyCurve, Setting};
use lnm_core::harness::{self, ExperimentConfig, RunRecord};
use lnm_core::methods;
use lnm_core::nn::{self, MlpModel, Targets};
use lnm_core::noise::{self, FlipRateLocation, FlipRates, TransitionMatrix};
use lnm_core::{LnmError, RngState};
use ndarray::Array2;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: LnmError) -> PyErr {
    match e {
        LnmError::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrRaise<T> {
    fn or_raise(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for lnm_core::Result<T> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_array(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Labeled feature matrix with clean and observed labels and split tags.
#[pyclass(name = "Dataset", module = "lnm", frozen)]
struct PyDataset {
    inner: LabeledDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (features, observed, k, clean=None))]
    fn new(features: Vec<Vec<f64>>, observed: Vec<usize>, k: usize, clean: Option<Vec<usize>>) -> PyResult<Self> {
        let x = to_array(&features)?.mapv(|v| v as f32);
        Ok(Self {
            inner: LabeledDataset::new(x, observed, clean, k).or_raise()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::load_flat(path).or_raise()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        dataset::save_flat(&self.inner, path).or_raise()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        let all: Vec<usize> = (0..self.inner.n()).collect();
        to_rows(&self.inner.rows_f64(&all))
    }

    #[getter]
    fn observed_labels(&self) -> Vec<usize> {
        self.inner.observed_labels().to_vec()
    }

    #[getter]
    fn clean_labels(&self) -> Option<Vec<usize>> {
        self.inner.clean_labels().map(<[usize]>::to_vec)
    }

    /// Split tags as strings: "train", "val" or "test".
    #[getter]
    fn splits(&self) -> Vec<&'static str> {
        self.inner
            .split_tags()
            .iter()
            .map(|s| match s {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            })
            .collect()
    }

    fn class_counts(&self) -> PyResult<Vec<usize>> {
        Ok(dataset::class_histogram(self.inner.reference_labels(), self.inner.k())
            .or_raise()?
            .counts)
    }

    fn with_observed_labels(&self, observed: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.clone().with_observed_labels(observed).or_raise()?,
        })
    }

    #[pyo3(signature = (train=0.8, val=0.1, test=0.1, seed=0))]
    fn stratified_split(&self, train: f64, val: f64, test: f64, seed: u64) -> PyResult<Self> {
        let ds = dataset::stratified_split(&self.inner, (train, val, test), &mut RngState::new(seed)).or_raise()?;
        Ok(Self { inner: ds })
    }

    #[pyo3(signature = (ratio, seed=0, count_descending=false))]
    fn long_tail(&self, ratio: f64, seed: u64, count_descending: bool) -> PyResult<Self> {
        let order = if count_descending {
            ClassOrder::CountDescending
        } else {
            ClassOrder::LabelIndex
        };
        let ds = dataset::long_tail(&self.inner, ratio, order, None, &mut RngState::new(seed)).or_raise()?;
        Ok(Self { inner: ds })
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, d={}, k={})",
            self.inner.n(),
            self.inner.d(),
            self.inner.k()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (classes, per_class, dim, spread=1.0, center_box=10.0, seed=0))]
fn make_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    center_box: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    let mut spec = BlobSpec::new(classes, per_class, dim, spread);
    spec.center_box = center_box;
    Ok(PyDataset {
        inner: spec.generate(&mut RngState::new(seed)).or_raise()?,
    })
}

/// Fully connected ReLU network with a softmax output.
#[pyclass(name = "Model", module = "lnm", frozen)]
struct PyModel {
    inner: MlpModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (layer_sizes, seed=0))]
    fn new(layer_sizes: Vec<usize>, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: MlpModel::new(&layer_sizes, &mut RngState::new(seed)).or_raise()?,
        })
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.layer_sizes().to_vec()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn logits(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.forward(to_array(&x)?.view()).or_raise()?))
    }

    fn predict_proba(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.predict_proba(to_array(&x)?.view()).or_raise()?))
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        self.inner.predict(to_array(&x)?.view()).or_raise()
    }

    /// Worst relative error of the analytic gradient against central
    /// differences, for one of the named losses.
    #[pyo3(signature = (x, labels, loss="ce", eps=1e-5))]
    fn grad_check(&self, x: Vec<Vec<f64>>, labels: Vec<usize>, loss: &str, eps: f64) -> PyResult<f64> {
        let kind = nn::LossKind::from_name(loss, self.inner.num_classes()).or_raise()?;
        nn::grad_check(&self.inner, to_array(&x)?.view(), &Targets::Hard(&labels), &kind, eps).or_raise()
    }
}

#[pyfunction]
fn softmax(logits: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&nn::softmax(to_array(&logits)?.view()).or_raise()?))
}

#[pyfunction]
fn cross_entropy(probs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Vec<f64>> {
    nn::cross_entropy(to_array(&probs)?.view(), &Targets::Hard(&labels)).or_raise()
}

/// Result of a noise draw.
#[pyclass(name = "NoiseOutcome", module = "lnm", frozen, get_all)]
struct PyNoiseOutcome {
    observed_labels: Vec<usize>,
    flipped: Vec<bool>,
    flip_rates: Option<Vec<f64>>,
    realized_rate: f64,
}

impl From<noise::NoiseOutcome> for PyNoiseOutcome {
    fn from(o: noise::NoiseOutcome) -> Self {
        Self {
            observed_labels: o.observed_labels,
            flipped: o.flipped,
            flip_rates: o.flip_rates,
            realized_rate: o.realized_rate,
        }
    }
}

#[pyfunction]
fn symmetric_matrix(rate: f64, k: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(noise::symmetric_matrix(rate, k).or_raise()?.to_rows())
}

#[pyfunction]
#[pyo3(signature = (clean, matrix, seed=0))]
fn apply_matrix(clean: Vec<usize>, matrix: Vec<Vec<f64>>, seed: u64) -> PyResult<PyNoiseOutcome> {
    let t = TransitionMatrix::from_rows(&matrix).or_raise()?;
    Ok(noise::apply_matrix(&clean, &t, &mut RngState::new(seed))
        .or_raise()?
        .into())
}

/// Instance-dependent noise driven by `reference`'s masked softmax.
#[pyfunction]
#[pyo3(signature = (features, clean, reference, rate, std=0.1, seed=0, nominal_location=false))]
fn idn_noise(
    features: Vec<Vec<f64>>,
    clean: Vec<usize>,
    reference: &PyModel,
    rate: f64,
    std: f64,
    seed: u64,
    nominal_location: bool,
) -> PyResult<PyNoiseOutcome> {
    let location = if nominal_location {
        FlipRateLocation::Nominal
    } else {
        FlipRateLocation::MeanMatched
    };
    let flip = FlipRates {
        mean: rate,
        std,
        location,
    };
    let x = to_array(&features)?;
    let out =
        noise::idn_generate_rows(x.view(), &clean, &reference.inner, &flip, &mut RngState::new(seed)).or_raise()?;
    Ok(out.into())
}

#[pyfunction]
fn estimation_error(estimate: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    noise::estimation_error(&to_array(&estimate)?, &to_array(&truth)?).or_raise()
}

#[pyfunction]
fn small_loss_select(losses: Vec<f64>, keep_fraction: f64) -> PyResult<Vec<usize>> {
    methods::small_loss_select(&losses, keep_fraction).or_raise()
}

#[pyfunction]
fn keep_schedule(epoch: f64, noise_rate: f64, ramp_epochs: f64) -> f64 {
    methods::keep_schedule(epoch, noise_rate, ramp_epochs)
}

#[pyfunction]
#[pyo3(signature = (counts, head=0.9, tail=0.6, epsilon=1e-12))]
fn class_thresholds(counts: Vec<usize>, head: f64, tail: f64, epsilon: f64) -> PyResult<Vec<f64>> {
    methods::class_thresholds(&ClassHistogram { counts }, head, tail, epsilon).or_raise()
}

/// Clean-component posterior of a two-component mixture fit to `losses`.
#[pyfunction]
fn gmm_clean_posterior(losses: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(methods::gmm2_fit(&losses).or_raise()?.clean_posterior)
}

#[pyfunction]
fn clean_ratio(selected: Vec<usize>, clean_mask: Vec<bool>) -> PyResult<f64> {
    eval::clean_ratio(&selected, &clean_mask).or_raise()
}

#[pyfunction]
fn coverage_ratio(selected: Vec<usize>, clean_mask: Vec<bool>) -> PyResult<f64> {
    eval::coverage_ratio(&selected, &clean_mask).or_raise()
}

/// Best, validation-selected and last-window test accuracy of a curve of
/// `(val_acc, test_acc)` points.
#[pyfunction]
#[pyo3(signature = (points, window=5))]
fn bvl(points: Vec<(f64, f64)>, window: usize) -> PyResult<(f64, f64, f64, usize)> {
    let s = eval::bvl(&AccuracyCurve::new(points).or_raise()?, window).or_raise()?;
    Ok((s.best, s.val_selected, s.last, s.v_epoch))
}

/// Average ranks per method from `{(method, pattern, setting): score}`.
///
/// Returns `(methods, overall)` with overall ranks aligned to `methods`.
#[pyfunction]
fn rank_methods(scores: BTreeMap<(String, String, String), f64>) -> PyResult<(Vec<String>, Vec<f64>)> {
    let table: BTreeMap<(String, Setting), f64> = scores
        .into_iter()
        .map(|((m, p, s), v)| ((m, Setting::new(p, s)), v))
        .collect();
    let t = eval::rank_methods(&table).or_raise()?;
    Ok((t.methods, t.overall))
}

/// One finished training run.
#[pyclass(name = "RunResult", module = "lnm", frozen)]
struct PyRunResult {
    inner: RunRecord,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn run_id(&self) -> &str {
        &self.inner.run_id
    }

    #[getter]
    fn best(&self) -> f64 {
        self.inner.summary.best
    }

    #[getter]
    fn val_selected(&self) -> f64 {
        self.inner.summary.val_selected
    }

    #[getter]
    fn last(&self) -> f64 {
        self.inner.summary.last
    }

    /// `(val_acc, test_acc)` per epoch.
    #[getter]
    fn curve(&self) -> Vec<(f64, f64)> {
        self.inner.curve.points().to_vec()
    }

    #[getter]
    fn train_loss(&self) -> Vec<f64> {
        self.inner.reports.iter().map(|r| r.train_loss).collect()
    }

    #[getter]
    fn est_error(&self) -> Vec<Option<f64>> {
        self.inner.reports.iter().map(|r| r.est_error).collect()
    }

    #[getter]
    fn per_class_test_accuracy(&self) -> Vec<Option<f64>> {
        self.inner.per_class_test_accuracy.clone()
    }

    /// Run summary as JSON, the same record the manifest stores.
    fn summary_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.run_summary()).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Runs one experiment described by a TOML config string.
#[pyfunction]
#[pyo3(signature = (config, seed=None, overrides=Vec::new()))]
fn run_experiment(py: Python<'_>, config: &str, seed: Option<u64>, overrides: Vec<String>) -> PyResult<PyRunResult> {
    let cfg = ExperimentConfig::from_toml_with_overrides(config, &overrides).or_raise()?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let rec = py.detach(|| harness::run_experiment(&cfg, seed)).or_raise()?;
    Ok(PyRunResult { inner: rec })
}

#[pymodule]
fn lnm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyNoiseOutcome>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(make_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(symmetric_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(apply_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(idn_noise, m)?)?;
    m.add_function(wrap_pyfunction!(estimation_error, m)?)?;
    m.add_function(wrap_pyfunction!(small_loss_select, m)?)?;
    m.add_function(wrap_pyfunction!(keep_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(class_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(gmm_clean_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(clean_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(bvl, m)?)?;
    m.add_function(wrap_pyfunction!(rank_methods, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
