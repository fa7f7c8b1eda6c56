//! Robustness metrics: checkpoint summaries, selection ratios, per-class
//! accuracy and cross-setting ranking.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{LnmError, Result};

/// Per-epoch (validation, test) accuracy pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    points: Vec<(f64, f64)>,
}

impl AccuracyCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(LnmError::domain("accuracy curve needs at least one epoch"));
        }
        if let Some((e, _)) = points
            .iter()
            .enumerate()
            .find(|(_, (v, t))| !(0.0..=1.0).contains(v) || !(0.0..=1.0).contains(t))
        {
            return Err(LnmError::domain(format!("accuracy at epoch {e} outside [0, 1]")));
        }
        Ok(Self { points })
    }

    pub fn epochs(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn val(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn test(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    /// Best test accuracy over all epochs.
    pub best: f64,
    /// Test accuracy at the earliest epoch of maximal validation accuracy.
    pub val_selected: f64,
    /// Mean test accuracy over the final window.
    pub last: f64,
    pub v_epoch: usize,
}

pub const DEFAULT_LAST_WINDOW: usize = 5;

pub fn bvl(curve: &AccuracyCurve, last_window: usize) -> Result<CheckpointSummary> {
    let e = curve.epochs();
    if last_window == 0 || e < last_window {
        return Err(LnmError::domain(format!(
            "{e} epochs cannot fill a last-window of {last_window}"
        )));
    }
    let pts = curve.points();
    let best = curve.test().fold(f64::NEG_INFINITY, f64::max);
    let mut v_epoch = 0;
    for (i, &(v, _)) in pts.iter().enumerate() {
        if v > pts[v_epoch].0 {
            v_epoch = i;
        }
    }
    let last = pts[e - last_window..].iter().map(|p| p.1).sum::<f64>() / last_window as f64;
    Ok(CheckpointSummary {
        best,
        val_selected: pts[v_epoch].1,
        last,
        v_epoch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub clean_ratio: Option<f64>,
    pub coverage_ratio: Option<f64>,
    /// Coverage per class of the clean label; `None` where the class has no
    /// clean samples.
    pub per_class_coverage: Vec<Option<f64>>,
}

fn selected_set(selected: &[usize], n: usize) -> Result<BTreeSet<usize>> {
    if let Some(&i) = selected.iter().find(|&&i| i >= n) {
        return Err(LnmError::domain(format!(
            "selected index {i} outside mask of length {n}"
        )));
    }
    Ok(selected.iter().copied().collect())
}

/// Fraction of selected samples whose label is correct.
pub fn clean_ratio(selected: &[usize], clean_mask: &[bool]) -> Result<f64> {
    let set = selected_set(selected, clean_mask.len())?;
    if set.is_empty() {
        return Err(LnmError::UndefinedMetric("clean_ratio of an empty selection"));
    }
    Ok(set.iter().filter(|&&i| clean_mask[i]).count() as f64 / set.len() as f64)
}

/// Fraction of correctly labelled samples that were selected.
pub fn coverage_ratio(selected: &[usize], clean_mask: &[bool]) -> Result<f64> {
    let set = selected_set(selected, clean_mask.len())?;
    let clean = clean_mask.iter().filter(|&&c| c).count();
    if clean == 0 {
        return Err(LnmError::UndefinedMetric("coverage_ratio without clean samples"));
    }
    Ok(set.iter().filter(|&&i| clean_mask[i]).count() as f64 / clean as f64)
}

/// Both ratios plus coverage per clean class, restricted to `pool` (the
/// training split). Undefined ratios come back as `None`.
pub fn selection_metrics(
    selected: &[usize],
    pool: &[usize],
    clean_labels: &[usize],
    observed: &[usize],
    k: usize,
) -> Result<SelectionMetrics> {
    let n = clean_labels.len();
    let in_pool = selected_set(pool, n)?;
    let sel = selected_set(selected, n)?;
    let mut mask = vec![false; n];
    for &i in &in_pool {
        mask[i] = clean_labels[i] == observed[i];
    }
    let sel: Vec<usize> = sel.into_iter().filter(|i| in_pool.contains(i)).collect();
    let mut totals = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for &i in &in_pool {
        if mask[i] {
            totals[clean_labels[i]] += 1;
        }
    }
    for &i in &sel {
        if mask[i] {
            hits[clean_labels[i]] += 1;
        }
    }
    Ok(SelectionMetrics {
        clean_ratio: clean_ratio(&sel, &mask).ok(),
        coverage_ratio: coverage_ratio(&sel, &mask).ok(),
        per_class_coverage: totals
            .iter()
            .zip(&hits)
            .map(|(&t, &h)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
    })
}

pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], k: usize) -> Result<Vec<Option<f64>>> {
    if predictions.len() != labels.len() {
        return Err(LnmError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let mut totals = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= k {
            return Err(LnmError::LabelRange { label: y, k });
        }
        totals[y] += 1;
        hits[y] += usize::from(p == y);
    }
    Ok(totals
        .iter()
        .zip(&hits)
        .map(|(&t, &h)| (t > 0).then(|| h as f64 / t as f64))
        .collect())
}

/// A setting within a noise pattern, e.g. pattern "sym" at rate "0.5".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Setting {
    pub pattern: String,
    pub name: String,
}

impl Setting {
    pub fn new(pattern: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            name: name.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub settings: Vec<Setting>,
    /// `ranks[m][s]`, 1 = best, ties share the average rank.
    pub ranks: Vec<Vec<f64>>,
    pub patterns: Vec<String>,
    /// `pattern_means[m][p]`.
    pub pattern_means: Vec<Vec<f64>>,
    pub overall: Vec<f64>,
}

impl RankTable {
    pub fn overall_of(&self, method: &str) -> Option<f64> {
        self.methods.iter().position(|m| m == method).map(|i| self.overall[i])
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["method".to_string()];
        header.extend(self.patterns.iter().cloned());
        header.push("overall".into());
        w.write_record(&header)?;
        for (m, name) in self.methods.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(self.pattern_means[m].iter().map(|v| v.to_string()));
            rec.push(self.overall[m].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ranks with average ties; higher score is better.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn rank_methods(scores: &BTreeMap<(String, Setting), f64>) -> Result<RankTable> {
    let methods: Vec<String> = scores
        .keys()
        .map(|(m, _)| m.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let settings: Vec<Setting> = scores
        .keys()
        .map(|(_, s)| s.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if methods.is_empty() {
        return Err(LnmError::domain("no scores to rank"));
    }
    let mut ranks = vec![vec![0.0; settings.len()]; methods.len()];
    for (s_idx, s) in settings.iter().enumerate() {
        let mut col = Vec::with_capacity(methods.len());
        for m in &methods {
            match scores.get(&(m.clone(), s.clone())) {
                Some(&v) if v.is_finite() => col.push(v),
                _ => {
                    return Err(LnmError::IncompleteTable {
                        method: m.clone(),
                        setting: format!("{}/{}", s.pattern, s.name),
                    })
                }
            }
        }
        for (m_idx, r) in average_ranks(&col).into_iter().enumerate() {
            ranks[m_idx][s_idx] = r;
        }
    }
    let patterns: Vec<String> = settings
        .iter()
        .map(|s| s.pattern.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pattern_means: Vec<Vec<f64>> = ranks
        .iter()
        .map(|row| {
            patterns
                .iter()
                .map(|p| {
                    let vals: Vec<f64> = settings
                        .iter()
                        .zip(row)
                        .filter(|(s, _)| &s.pattern == p)
                        .map(|(_, &r)| r)
                        .collect();
                    vals.iter().sum::<f64>() / vals.len() as f64
                })
                .collect()
        })
        .collect();
    let overall = pattern_means
        .iter()
        .map(|pm| pm.iter().sum::<f64>() / pm.len() as f64)
        .collect();
    Ok(RankTable {
        methods,
        settings,
        ranks,
        patterns,
        pattern_means,
        overall,
    })
}
