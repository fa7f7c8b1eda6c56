//! Labeled feature matrices with clean/observed label channels and split tags.

mod blobs;
mod flat;

pub use blobs::{make_blobs, BlobSpec};
pub use flat::{load_flat, save_flat, FLAT_MAGIC, FLAT_VERSION};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{LnmError, Result};
use crate::rng::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    k: usize,
    features: Array2<f32>,
    clean_labels: Option<Vec<usize>>,
    observed_labels: Vec<usize>,
    split_tags: Vec<Split>,
}

impl LabeledDataset {
    /// Every sample starts tagged `Train`.
    pub fn new(
        features: Array2<f32>,
        observed_labels: Vec<usize>,
        clean_labels: Option<Vec<usize>>,
        k: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        let split_tags = vec![Split::Train; n];
        Self::from_parts(features, observed_labels, clean_labels, split_tags, k)
    }

    pub fn from_parts(
        features: Array2<f32>,
        observed_labels: Vec<usize>,
        clean_labels: Option<Vec<usize>>,
        split_tags: Vec<Split>,
        k: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if k == 0 {
            return Err(LnmError::domain("class count must be positive"));
        }
        for len in [observed_labels.len(), split_tags.len()]
            .into_iter()
            .chain(clean_labels.as_ref().map(Vec::len))
        {
            if len != n {
                return Err(LnmError::LengthMismatch { left: n, right: len });
            }
        }
        if let Some(&bad) = observed_labels
            .iter()
            .chain(clean_labels.iter().flatten())
            .find(|&&y| y >= k)
        {
            return Err(LnmError::LabelRange { label: bad, k });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(LnmError::domain("features must be finite"));
        }
        Ok(Self {
            k,
            features,
            clean_labels,
            observed_labels,
            split_tags,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn clean_labels(&self) -> Option<&[usize]> {
        self.clean_labels.as_deref()
    }

    pub fn observed_labels(&self) -> &[usize] {
        &self.observed_labels
    }

    pub fn split_tags(&self) -> &[Split] {
        &self.split_tags
    }

    /// Clean labels when known, otherwise the observed channel.
    pub fn reference_labels(&self) -> &[usize] {
        self.clean_labels.as_deref().unwrap_or(&self.observed_labels)
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.split_tags[i] == split).collect()
    }

    /// Rows at `indices`, widened to f64.
    pub fn rows_f64(&self, indices: &[usize]) -> Array2<f64> {
        let d = self.d();
        let mut out = Array2::zeros((indices.len(), d));
        for (r, &i) in indices.iter().enumerate() {
            for (o, &v) in out.row_mut(r).iter_mut().zip(self.features.row(i)) {
                *o = f64::from(v);
            }
        }
        out
    }

    pub fn with_observed_labels(mut self, observed: Vec<usize>) -> Result<Self> {
        if observed.len() != self.n() {
            return Err(LnmError::LengthMismatch {
                left: self.n(),
                right: observed.len(),
            });
        }
        if let Some(&bad) = observed.iter().find(|&&y| y >= self.k) {
            return Err(LnmError::LabelRange { label: bad, k: self.k });
        }
        self.observed_labels = observed;
        Ok(self)
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            k: self.k,
            features: self.features.select(Axis(0), indices),
            clean_labels: self
                .clean_labels
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            observed_labels: indices.iter().map(|&i| self.observed_labels[i]).collect(),
            split_tags: indices.iter().map(|&i| self.split_tags[i]).collect(),
        }
    }

    /// Per-column standard deviation over the given rows.
    pub fn column_std(&self, indices: &[usize]) -> Vec<f64> {
        let rows = self.rows_f64(indices);
        rows.std_axis(Axis(0), 0.0).to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassHistogram {
    pub counts: Vec<usize>,
}

impl ClassHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn min(&self) -> usize {
        self.counts.iter().copied().min().unwrap_or(0)
    }

    pub fn max(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

pub fn class_histogram(labels: &[usize], k: usize) -> Result<ClassHistogram> {
    let mut counts = vec![0; k];
    for &y in labels {
        *counts.get_mut(y).ok_or(LnmError::LabelRange { label: y, k })? += 1;
    }
    Ok(ClassHistogram { counts })
}

/// How classes are ranked from head to tail before exponential downsampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrder {
    /// Class 0 is the head, class k-1 the tail.
    #[default]
    LabelIndex,
    /// Classes ranked by descending count, ties by label.
    CountDescending,
}

/// Target size of the class at rank `j`: `⌊n_head · r^(−j/(k−1))⌋`.
pub fn long_tail_count(n_head: usize, ratio: f64, rank: usize, k: usize) -> usize {
    if k < 2 {
        return n_head;
    }
    let exact = n_head as f64 * ratio.powf(-(rank as f64) / (k - 1) as f64);
    // absorb representation error so exact products like 9000 · 0.01 floor to 90
    (exact + 1e-9).floor() as usize
}

/// Exponentially downsamples classes so that head/tail = `ratio`.
///
/// Only samples tagged with `within` are affected when it is given; samples in
/// other splits are kept as they are. Class sizes are computed on clean labels
/// when present.
pub fn long_tail(
    ds: &LabeledDataset,
    ratio: f64,
    order: ClassOrder,
    within: Option<Split>,
    rng: &mut RngState,
) -> Result<LabeledDataset> {
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(LnmError::precondition(format!(
            "imbalance ratio must be >= 1, got {ratio}"
        )));
    }
    let k = ds.k();
    let labels = ds.reference_labels();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..ds.n() {
        if within.is_none_or(|s| ds.split_tags()[i] == s) {
            by_class[labels[i]].push(i);
        }
    }
    let mut ranked: Vec<usize> = (0..k).collect();
    if order == ClassOrder::CountDescending {
        ranked.sort_by(|&a, &b| by_class[b].len().cmp(&by_class[a].len()).then(a.cmp(&b)));
    }
    let n_head = by_class[ranked[0]].len();
    let mut keep: Vec<bool> = ds
        .split_tags()
        .iter()
        .map(|t| within.is_some_and(|s| *t != s))
        .collect();
    for (rank, &class) in ranked.iter().enumerate() {
        let target = long_tail_count(n_head, ratio, rank, k).min(by_class[class].len());
        if target == 0 {
            return Err(LnmError::EmptyClass { class });
        }
        let mut members = by_class[class].clone();
        members.shuffle(rng);
        for &i in &members[..target] {
            keep[i] = true;
        }
    }
    let kept: Vec<usize> = (0..ds.n()).filter(|&i| keep[i]).collect();
    Ok(ds.subset(&kept))
}

/// Per-class proportional split into train/val/test.
///
/// Each class is permuted with `rng`; val and test receive
/// `⌊n_c · fraction⌋` samples and train keeps the remainder.
pub fn stratified_split(ds: &LabeledDataset, fractions: (f64, f64, f64), rng: &mut RngState) -> Result<LabeledDataset> {
    let (f_train, f_val, f_test) = fractions;
    if [f_train, f_val, f_test].iter().any(|f| !(*f > 0.0)) {
        return Err(LnmError::precondition(format!(
            "split fractions must all be positive, got {fractions:?}"
        )));
    }
    if (f_train + f_val + f_test - 1.0).abs() > 1e-9 {
        return Err(LnmError::precondition(format!(
            "split fractions must sum to 1, got {fractions:?}"
        )));
    }
    let labels = ds.reference_labels();
    let mut tags = vec![Split::Train; ds.n()];
    for class in 0..ds.k() {
        let mut members: Vec<usize> = (0..ds.n()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let n_c = members.len();
        let n_val = (n_c as f64 * f_val + 1e-9).floor() as usize;
        let n_test = (n_c as f64 * f_test + 1e-9).floor() as usize;
        if n_val == 0 || n_test == 0 || n_val + n_test >= n_c {
            let required = [f_train, f_val, f_test]
                .iter()
                .map(|f| (1.0 / f).ceil() as usize)
                .max()
                .unwrap();
            return Err(LnmError::Stratification {
                class,
                available: n_c,
                required,
            });
        }
        members.shuffle(rng);
        for &i in &members[..n_val] {
            tags[i] = Split::Val;
        }
        for &i in &members[n_val..n_val + n_test] {
            tags[i] = Split::Test;
        }
    }
    let mut out = ds.clone();
    out.split_tags = tags;
    Ok(out)
}
