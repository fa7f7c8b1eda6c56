//! Label-noise synthesis and noise diagnostics.
//!
//! Class-conditional noise is driven by a row-stochastic [`TransitionMatrix`].
//! Instance-dependent noise uses a reference classifier: each sample gets a
//! flip rate `q_i` from a truncated normal, and on a flip the new label is
//! drawn from the reference model's softmax with the true class masked out,
//! i.e. from `T_i(x) = (1 − q_i) e_y + q_i π(x)`.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{LnmError, Result};
use crate::nn::{softmax, MlpModel};
use crate::rng::RngState;

const ROW_TOL: f64 = 1e-9;

/// `entries[[i, j]] = P(observed j | true i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    entries: Array2<f64>,
}

impl TransitionMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c || r == 0 {
            return Err(LnmError::Matrix(format!(
                "transition matrix must be square, got {r}x{c}"
            )));
        }
        for (i, row) in entries.rows().into_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(LnmError::Matrix(format!("row {i} has entries outside [0, 1]")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(LnmError::Matrix(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(LnmError::Matrix("transition rows must all have length k".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(Array2::from_shape_vec((k, k), flat).expect("square"))
    }

    pub fn identity(k: usize) -> Self {
        Self {
            entries: Array2::eye(k),
        }
    }

    pub fn k(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

/// Diagonal `1 − η`, off-diagonal `η / (k − 1)`.
pub fn symmetric_matrix(rate: f64, k: usize) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(LnmError::domain(format!("symmetric noise needs k >= 2, got {k}")));
    }
    check_rate(rate)?;
    let off = rate / (k - 1) as f64;
    let entries = Array2::from_shape_fn((k, k), |(i, j)| if i == j { 1.0 - rate } else { off });
    TransitionMatrix::new(entries)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(LnmError::domain(format!("noise rate {rate} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Symmetric,
    ClassConditional,
    InstanceDependent,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::ClassConditional => "class_conditional",
            NoiseKind::InstanceDependent => "instance_dependent",
        }
    }
}

/// Where the truncated normal for instance flip rates is centred.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipRateLocation {
    /// Location chosen so the truncated distribution has mean η.
    #[default]
    MeanMatched,
    /// Location η itself; the truncated mean drifts toward 0.5 near the bounds.
    Nominal,
}

/// Which clean labeled samples the reference classifier is trained on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    /// A stratified slice carved out of the training split and removed from it.
    #[default]
    TrainHoldout,
    /// The clean test split, as in the literal generation protocol.
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default)]
    pub source: ReferenceSource,
    #[serde(default = "default_reference_fraction")]
    pub fraction: f64,
    #[serde(default = "default_reference_epochs")]
    pub epochs: usize,
}

fn default_reference_fraction() -> f64 {
    0.2
}

fn default_reference_epochs() -> usize {
    20
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            source: ReferenceSource::default(),
            fraction: default_reference_fraction(),
            epochs: default_reference_epochs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub rate: f64,
    /// Overrides the run seed for the noise streams when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_flip_std")]
    pub flip_std: f64,
    #[serde(default)]
    pub flip_location: FlipRateLocation,
    #[serde(default)]
    pub reference: ReferenceConfig,
}

fn default_flip_std() -> f64 {
    0.1
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::with_kind(NoiseKind::None, 0.0)
    }

    pub fn symmetric(rate: f64) -> Self {
        Self::with_kind(NoiseKind::Symmetric, rate)
    }

    pub fn instance_dependent(rate: f64) -> Self {
        Self::with_kind(NoiseKind::InstanceDependent, rate)
    }

    fn with_kind(kind: NoiseKind, rate: f64) -> Self {
        Self {
            kind,
            rate,
            seed: None,
            matrix: None,
            flip_std: default_flip_std(),
            flip_location: FlipRateLocation::default(),
            reference: ReferenceConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.rate)?;
        if (self.kind == NoiseKind::ClassConditional) != self.matrix.is_some() {
            return Err(LnmError::config(
                "a transition matrix is required for class_conditional noise and only there",
            ));
        }
        if let Some(m) = &self.matrix {
            TransitionMatrix::from_rows(m)?;
        }
        if !(self.flip_std >= 0.0 && self.flip_std.is_finite()) {
            return Err(LnmError::config(format!(
                "flip_std must be >= 0, got {}",
                self.flip_std
            )));
        }
        let f = self.reference.fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(LnmError::config(format!(
                "reference fraction must lie in (0, 1), got {f}"
            )));
        }
        Ok(())
    }

    /// The class-conditional matrix implied by this spec, if any.
    pub fn transition(&self, k: usize) -> Result<Option<TransitionMatrix>> {
        match self.kind {
            NoiseKind::None => Ok(Some(TransitionMatrix::identity(k))),
            NoiseKind::Symmetric => symmetric_matrix(self.rate, k).map(Some),
            NoiseKind::ClassConditional => {
                let m = TransitionMatrix::from_rows(self.matrix.as_deref().unwrap_or_default())?;
                if m.k() != k {
                    return Err(LnmError::Shape {
                        context: "noise matrix order",
                        expected: k,
                        actual: m.k(),
                    });
                }
                Ok(Some(m))
            }
            NoiseKind::InstanceDependent => Ok(None),
        }
    }

    pub fn flip_rates(&self) -> FlipRates {
        FlipRates {
            mean: self.rate,
            std: self.flip_std,
            location: self.flip_location,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseOutcome {
    pub observed_labels: Vec<usize>,
    pub flipped: Vec<bool>,
    /// Per-sample flip rates; instance-dependent noise only.
    pub flip_rates: Option<Vec<f64>>,
    pub realized_rate: f64,
}

impl NoiseOutcome {
    fn from_labels(clean: &[usize], observed: Vec<usize>, flip_rates: Option<Vec<f64>>) -> Self {
        let flipped: Vec<bool> = clean.iter().zip(&observed).map(|(a, b)| a != b).collect();
        let realized_rate = if flipped.is_empty() {
            0.0
        } else {
            flipped.iter().filter(|&&f| f).count() as f64 / flipped.len() as f64
        };
        Self {
            observed_labels: observed,
            flipped,
            flip_rates,
            realized_rate,
        }
    }

    /// Writes `index,clean,observed,flipped,q`; `q` is empty when absent.
    pub fn write_csv<W: Write>(&self, clean: &[usize], out: W) -> Result<()> {
        if clean.len() != self.observed_labels.len() {
            return Err(LnmError::LengthMismatch {
                left: clean.len(),
                right: self.observed_labels.len(),
            });
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "clean", "observed", "flipped", "q"])?;
        for i in 0..clean.len() {
            let q = self.flip_rates.as_ref().map(|q| q[i].to_string()).unwrap_or_default();
            w.write_record([
                i.to_string(),
                clean[i].to_string(),
                self.observed_labels[i].to_string(),
                u8::from(self.flipped[i]).to_string(),
                q,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draw from a categorical distribution by inverse CDF. Zero-probability
/// entries can never be returned.
fn sample_categorical(probs: impl Iterator<Item = f64> + Clone, rng: &mut RngState) -> usize {
    let u: f64 = rng.random();
    let total: f64 = probs.clone().sum();
    let target = u * total;
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (j, p) in probs.enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = j;
        cum += p;
        if target < cum {
            return j;
        }
    }
    last_positive
}

/// Draws each observed label from row `clean_i` of `t`.
pub fn apply_matrix(clean: &[usize], t: &TransitionMatrix, rng: &mut RngState) -> Result<NoiseOutcome> {
    // re-validate: a caller may have built the matrix from unchecked parts
    let t = TransitionMatrix::new(t.entries.clone())?;
    let k = t.k();
    let mut observed = Vec::with_capacity(clean.len());
    for &y in clean {
        if y >= k {
            return Err(LnmError::LabelRange { label: y, k });
        }
        observed.push(sample_categorical(t.entries.row(y).iter().copied(), rng));
    }
    Ok(NoiseOutcome::from_labels(clean, observed, None))
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Probability mass of `[lo, hi]` under `N(mean, std²)`.
pub fn interval_mass(mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    if std == 0.0 {
        return if (lo..=hi).contains(&mean) { 1.0 } else { 0.0 };
    }
    let a = (lo - mean) / std;
    let b = (hi - mean) / std;
    // evaluate in the tail with smaller cancellation
    if a > 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

/// Mean of `N(mean, std²)` truncated to `[lo, hi]`.
pub fn truncated_mean(mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    if std == 0.0 {
        return mean.clamp(lo, hi);
    }
    let a = (lo - mean) / std;
    let b = (hi - mean) / std;
    mean + std * (std_normal_pdf(a) - std_normal_pdf(b)) / interval_mass(mean, std, lo, hi)
}

/// Rejection sampling from `N(mean, std²)` restricted to `[lo, hi]`.
pub fn trunc_normal(mean: f64, std: f64, lo: f64, hi: f64, rng: &mut RngState) -> Result<f64> {
    if !(lo < hi) {
        return Err(LnmError::precondition(format!(
            "truncation needs lo < hi, got [{lo}, {hi}]"
        )));
    }
    let mass = interval_mass(mean, std, lo, hi);
    if !(mass >= 1e-12) {
        return Err(LnmError::InfeasibleTruncation {
            mean,
            std,
            lo,
            hi,
            mass,
        });
    }
    if std == 0.0 {
        return Ok(mean);
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let x = mean + std * z;
        if (lo..=hi).contains(&x) {
            return Ok(x);
        }
    }
}

/// Distribution of per-instance flip rates on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlipRates {
    pub mean: f64,
    pub std: f64,
    pub location: FlipRateLocation,
}

impl FlipRates {
    /// Location parameter handed to the truncated normal.
    pub fn location_param(&self) -> f64 {
        match self.location {
            FlipRateLocation::Nominal => self.mean,
            FlipRateLocation::MeanMatched if self.std == 0.0 => self.mean,
            FlipRateLocation::MeanMatched => {
                // truncated mean is increasing in the location; the search
                // window keeps the acceptance rate of rejection sampling >= ~2%
                let (mut lo, mut hi) = (-2.0 * self.std, 1.0 + 2.0 * self.std);
                let f = |m: f64| truncated_mean(m, self.std, 0.0, 1.0) - self.mean;
                if f(lo) >= 0.0 {
                    return lo;
                }
                if f(hi) <= 0.0 {
                    return hi;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    pub fn sample(&self, n: usize, rng: &mut RngState) -> Result<Vec<f64>> {
        let loc = self.location_param();
        (0..n).map(|_| trunc_normal(loc, self.std, 0.0, 1.0, rng)).collect()
    }
}

/// Instance-dependent noise from a reference classifier.
///
/// Flip rates for all rows are drawn first, then each row keeps its label
/// with probability `1 − q_i` or else draws from the masked softmax.
pub fn idn_generate_rows(
    features: ArrayView2<f64>,
    clean: &[usize],
    ref_model: &MlpModel,
    flip: &FlipRates,
    rng: &mut RngState,
) -> Result<NoiseOutcome> {
    let k = ref_model.num_classes();
    if k < 2 {
        return Err(LnmError::domain("instance-dependent noise needs k >= 2"));
    }
    check_rate(flip.mean)?;
    if features.nrows() != clean.len() {
        return Err(LnmError::LengthMismatch {
            left: features.nrows(),
            right: clean.len(),
        });
    }
    if let Some(&bad) = clean.iter().find(|&&y| y >= k) {
        return Err(LnmError::LabelRange { label: bad, k });
    }
    let q = flip.sample(clean.len(), rng)?;
    let mut logits = ref_model.forward(features)?;
    for (mut row, &y) in logits.rows_mut().into_iter().zip(clean) {
        row[y] = f64::NEG_INFINITY;
    }
    let mislabel = softmax(logits.view())?;
    let mut observed = Vec::with_capacity(clean.len());
    for (i, &y) in clean.iter().enumerate() {
        let u: f64 = rng.random();
        if u < q[i] {
            observed.push(sample_categorical(mislabel.row(i).iter().copied(), rng));
        } else {
            observed.push(y);
        }
    }
    Ok(NoiseOutcome::from_labels(clean, observed, Some(q)))
}

/// Instance-dependent noise over every sample of `ds`, using its clean labels.
pub fn idn_generate(ds: &LabeledDataset, ref_model: &MlpModel, rate: f64, rng: &mut RngState) -> Result<NoiseOutcome> {
    let clean = ds
        .clean_labels()
        .ok_or_else(|| LnmError::precondition("instance-dependent noise needs clean labels"))?;
    let all: Vec<usize> = (0..ds.n()).collect();
    let flip = FlipRates {
        mean: rate,
        std: default_flip_std(),
        location: FlipRateLocation::default(),
    };
    idn_generate_rows(ds.rows_f64(&all).view(), clean, ref_model, &flip, rng)
}

pub fn empirical_noise_rate(clean: &[usize], observed: &[usize]) -> Result<f64> {
    if clean.len() != observed.len() {
        return Err(LnmError::LengthMismatch {
            left: clean.len(),
            right: observed.len(),
        });
    }
    if clean.is_empty() {
        return Err(LnmError::UndefinedMetric("noise rate of an empty label vector"));
    }
    let diff = clean.iter().zip(observed).filter(|(a, b)| a != b).count();
    Ok(diff as f64 / clean.len() as f64)
}

/// Row-normalized confusion of observed against clean labels.
pub fn empirical_transition(clean: &[usize], observed: &[usize], k: usize) -> Result<Array2<f64>> {
    if clean.len() != observed.len() {
        return Err(LnmError::LengthMismatch {
            left: clean.len(),
            right: observed.len(),
        });
    }
    let mut m = Array2::<f64>::zeros((k, k));
    for (&c, &o) in clean.iter().zip(observed) {
        if c >= k || o >= k {
            return Err(LnmError::LabelRange { label: c.max(o), k });
        }
        m[[c, o]] += 1.0;
    }
    for mut row in m.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    Ok(m)
}

/// `‖T̂ − T‖₁ / ‖T‖₁`, entrywise.
pub fn estimation_error(estimate: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(LnmError::Shape {
            context: "estimation error matrix order",
            expected: truth.nrows(),
            actual: estimate.nrows(),
        });
    }
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum();
    let den: f64 = truth.iter().map(|v| v.abs()).sum();
    if den == 0.0 {
        return Err(LnmError::UndefinedMetric("estimation error against a zero matrix"));
    }
    Ok(num / den)
}
