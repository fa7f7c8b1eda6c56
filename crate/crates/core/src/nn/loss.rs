use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{LnmError, Result};

/// Lower clamp applied to probabilities before taking a log.
pub const LOG_CLAMP: f64 = 1e-12;
/// Value substituted for `log 0` on the target side of reverse cross-entropy.
pub const RCE_LOG_FLOOR: f64 = -4.0;

pub fn log_clamped(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

/// Row-wise softmax with max shift. `-inf` entries map to exactly 0.
pub fn softmax(logits: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = logits.to_owned();
    for (row_idx, mut row) in out.rows_mut().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(LnmError::DegenerateRow { row: row_idx });
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row /= sum;
    }
    Ok(out)
}

/// Supervision for a batch: hard class indices or per-row distributions.
#[derive(Clone, Debug)]
pub enum Targets<'a> {
    Hard(&'a [usize]),
    Soft(ArrayView2<'a, f64>),
}

impl Targets<'_> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Hard(l) => l.len(),
            Targets::Soft(q) => q.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_distribution(&self, k: usize) -> Result<Array2<f64>> {
        match self {
            Targets::Hard(labels) => {
                let mut q = Array2::zeros((labels.len(), k));
                for (i, &y) in labels.iter().enumerate() {
                    if y >= k {
                        return Err(LnmError::LabelRange { label: y, k });
                    }
                    q[[i, y]] = 1.0;
                }
                Ok(q)
            }
            Targets::Soft(q) => {
                if q.ncols() != k {
                    return Err(LnmError::Shape {
                        context: "soft target width",
                        expected: k,
                        actual: q.ncols(),
                    });
                }
                Ok(q.to_owned())
            }
        }
    }
}

/// Per-sample cross-entropy `-Σ q log p` with the probability clamp.
pub fn cross_entropy(probs: ArrayView2<f64>, targets: &Targets) -> Result<Vec<f64>> {
    check_rows(probs.nrows(), targets.len())?;
    let q = targets.to_distribution(probs.ncols())?;
    Ok(probs
        .rows()
        .into_iter()
        .zip(q.rows())
        .map(|(p, q)| ce_row(p.iter(), q.iter()))
        .collect())
}

fn check_rows(probs: usize, targets: usize) -> Result<()> {
    if probs != targets {
        return Err(LnmError::LengthMismatch {
            left: probs,
            right: targets,
        });
    }
    Ok(())
}

fn ce_row<'a>(p: impl Iterator<Item = &'a f64>, q: impl Iterator<Item = &'a f64>) -> f64 {
    p.zip(q)
        .filter(|(_, &qk)| qk != 0.0)
        .map(|(&pk, &qk)| -qk * log_clamped(pk))
        .sum()
}

/// Weights of the composite per-sample loss used by the custom-weighted kind.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    /// `-Σ q log p`
    pub ce: f64,
    /// `-Σ p log q`, with `log q` floored at `rce_log_floor`
    pub rce: f64,
    pub rce_log_floor: f64,
    /// `Σ p log p` (the negated entropy)
    pub neg_entropy: f64,
    /// `mean_k (p_k - q_k)^2`
    pub sq_err: f64,
    /// `KL(p‖r) + KL(r‖p)` against a fixed peer distribution `r`
    pub sym_kl: f64,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            ce: 0.0,
            rce: 0.0,
            rce_log_floor: RCE_LOG_FLOOR,
            neg_entropy: 0.0,
            sq_err: 0.0,
            sym_kl: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub enum LossKind {
    CrossEntropy,
    /// `alpha · CE + beta · RCE`
    Symmetric {
        alpha: f64,
        beta: f64,
        log_floor: f64,
    },
    /// Cross-entropy against `(1 - epsilon) q + epsilon / k`.
    Smoothed {
        epsilon: f64,
    },
    /// Cross-entropy on the forward-corrected posterior `p · T` plus
    /// `volume_weight · log|det T|`.
    VolMin {
        transition: Array2<f64>,
        volume_weight: f64,
    },
    Custom {
        terms: LossTerms,
        row_weights: Option<Vec<f64>>,
        peer: Option<Array2<f64>>,
    },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "ce",
            LossKind::Symmetric { .. } => "sce",
            LossKind::Smoothed { .. } => "ls-ce",
            LossKind::VolMin { .. } => "volmin",
            LossKind::Custom { .. } => "custom-weighted",
        }
    }

    /// Default-parameterized kind by name, for `k` classes.
    pub fn from_name(name: &str, k: usize) -> Result<Self> {
        Ok(match name {
            "ce" => LossKind::CrossEntropy,
            "sce" => LossKind::Symmetric {
                alpha: 0.1,
                beta: 1.0,
                log_floor: RCE_LOG_FLOOR,
            },
            "ls-ce" => LossKind::Smoothed { epsilon: 0.1 },
            "volmin" => LossKind::VolMin {
                transition: Array2::eye(k),
                volume_weight: 1e-4,
            },
            "custom-weighted" => LossKind::Custom {
                terms: LossTerms {
                    ce: 1.0,
                    ..LossTerms::default()
                },
                row_weights: None,
                peer: None,
            },
            other => {
                return Err(LnmError::config(format!("unknown loss kind {other:?}")));
            }
        })
    }
}

pub(crate) struct LossEval {
    pub per_sample: Vec<f64>,
    pub dloss_dprob: Array2<f64>,
}

pub(crate) fn rce_log(q: f64, floor: f64) -> f64 {
    if q <= 0.0 {
        floor
    } else {
        q.ln().max(floor)
    }
}

/// Per-sample loss values and their gradient with respect to the probabilities.
pub(crate) fn evaluate(kind: &LossKind, probs: ArrayView2<f64>, targets: &Targets) -> Result<LossEval> {
    let (b, k) = probs.dim();
    check_rows(b, targets.len())?;
    let mut q = targets.to_distribution(k)?;
    let mut per_sample = vec![0.0; b];
    let mut grad = Array2::<f64>::zeros((b, k));

    match kind {
        LossKind::CrossEntropy => add_ce(probs, q.view(), 1.0, &mut per_sample, &mut grad),
        LossKind::Symmetric { alpha, beta, log_floor } => {
            add_ce(probs, q.view(), *alpha, &mut per_sample, &mut grad);
            add_rce(probs, q.view(), *beta, *log_floor, &mut per_sample, &mut grad);
        }
        LossKind::Smoothed { epsilon } => {
            if !(0.0..1.0).contains(epsilon) {
                return Err(LnmError::config(format!(
                    "label smoothing epsilon {epsilon} outside [0, 1)"
                )));
            }
            q.mapv_inplace(|v| (1.0 - epsilon) * v + epsilon / k as f64);
            add_ce(probs, q.view(), 1.0, &mut per_sample, &mut grad);
        }
        LossKind::VolMin {
            transition,
            volume_weight,
        } => {
            if transition.dim() != (k, k) {
                return Err(LnmError::Shape {
                    context: "transition matrix order",
                    expected: k,
                    actual: transition.nrows(),
                });
            }
            let volume = if *volume_weight != 0.0 {
                volume_weight * log_abs_det(transition)?
            } else {
                0.0
            };
            let noisy = probs.dot(transition);
            for i in 0..b {
                let mut loss = volume;
                for j in 0..k {
                    let qj = q[[i, j]];
                    if qj == 0.0 {
                        continue;
                    }
                    let pt = noisy[[i, j]];
                    loss -= qj * log_clamped(pt);
                    if pt > LOG_CLAMP {
                        for c in 0..k {
                            grad[[i, c]] -= qj * transition[[c, j]] / pt;
                        }
                    }
                }
                per_sample[i] = loss;
            }
        }
        LossKind::Custom {
            terms,
            row_weights,
            peer,
        } => {
            if terms.ce != 0.0 {
                add_ce(probs, q.view(), terms.ce, &mut per_sample, &mut grad);
            }
            if terms.rce != 0.0 {
                add_rce(
                    probs,
                    q.view(),
                    terms.rce,
                    terms.rce_log_floor,
                    &mut per_sample,
                    &mut grad,
                );
            }
            if terms.neg_entropy != 0.0 {
                Zip::from(probs.rows())
                    .and(grad.rows_mut())
                    .and(&mut per_sample)
                    .for_each(|p, mut g, l| {
                        for (&pk, gk) in p.iter().zip(g.iter_mut()) {
                            *l += terms.neg_entropy * pk * log_clamped(pk);
                            let d = if pk > LOG_CLAMP { pk.ln() + 1.0 } else { LOG_CLAMP.ln() };
                            *gk += terms.neg_entropy * d;
                        }
                    });
            }
            if terms.sq_err != 0.0 {
                let scale = terms.sq_err / k as f64;
                Zip::from(probs.rows())
                    .and(q.rows())
                    .and(grad.rows_mut())
                    .and(&mut per_sample)
                    .for_each(|p, q, mut g, l| {
                        for ((&pk, &qk), gk) in p.iter().zip(q.iter()).zip(g.iter_mut()) {
                            *l += scale * (pk - qk).powi(2);
                            *gk += scale * 2.0 * (pk - qk);
                        }
                    });
            }
            if terms.sym_kl != 0.0 {
                let peer = peer
                    .as_ref()
                    .ok_or_else(|| LnmError::config("sym_kl term requires a peer distribution"))?;
                if peer.dim() != (b, k) {
                    return Err(LnmError::Shape {
                        context: "peer distribution rows",
                        expected: b,
                        actual: peer.nrows(),
                    });
                }
                Zip::from(probs.rows())
                    .and(peer.rows())
                    .and(grad.rows_mut())
                    .and(&mut per_sample)
                    .for_each(|p, r, mut g, l| {
                        for ((&pk, &rk), gk) in p.iter().zip(r.iter()).zip(g.iter_mut()) {
                            let diff = log_clamped(pk) - log_clamped(rk);
                            *l += terms.sym_kl * (pk - rk) * diff;
                            let inv = if pk > LOG_CLAMP { 1.0 / pk } else { 0.0 };
                            *gk += terms.sym_kl * (diff + (pk - rk) * inv);
                        }
                    });
            }
            if let Some(w) = row_weights {
                check_rows(b, w.len())?;
                for ((l, mut g), &wi) in per_sample.iter_mut().zip(grad.rows_mut()).zip(w) {
                    *l *= wi;
                    g *= wi;
                }
            }
        }
    }
    Ok(LossEval {
        per_sample,
        dloss_dprob: grad,
    })
}

fn add_ce(probs: ArrayView2<f64>, q: ArrayView2<f64>, weight: f64, per_sample: &mut [f64], grad: &mut Array2<f64>) {
    Zip::from(probs.rows())
        .and(q.rows())
        .and(grad.rows_mut())
        .and(per_sample)
        .for_each(|p, q, mut g, l| {
            for ((&pk, &qk), gk) in p.iter().zip(q.iter()).zip(g.iter_mut()) {
                if qk == 0.0 {
                    continue;
                }
                *l -= weight * qk * log_clamped(pk);
                if pk > LOG_CLAMP {
                    *gk -= weight * qk / pk;
                }
            }
        });
}

fn add_rce(
    probs: ArrayView2<f64>,
    q: ArrayView2<f64>,
    weight: f64,
    floor: f64,
    per_sample: &mut [f64],
    grad: &mut Array2<f64>,
) {
    Zip::from(probs.rows())
        .and(q.rows())
        .and(grad.rows_mut())
        .and(per_sample)
        .for_each(|p, q, mut g, l| {
            for ((&pk, &qk), gk) in p.iter().zip(q.iter()).zip(g.iter_mut()) {
                let lq = rce_log(qk, floor);
                *l -= weight * pk * lq;
                *gk -= weight * lq;
            }
        });
}

pub(crate) fn log_abs_det(m: &Array2<f64>) -> Result<f64> {
    let n = m.nrows();
    let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let det = mat.determinant();
    if !det.is_finite() || det.abs() < 1e-300 {
        return Err(LnmError::VolumeDegeneracy { det });
    }
    Ok(det.abs().ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_symmetric_and_shift_invariant() {
        let p = softmax(array![[0.0, 0.0]].view()).unwrap();
        assert_eq!(p, array![[0.5, 0.5]]);
        let a = softmax(array![[0.3, -1.2, 2.0]].view()).unwrap();
        let b = softmax(array![[100.3, 98.8, 102.0]].view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_gap_and_masking() {
        let p = softmax(array![[1000.0, 0.0]].view()).unwrap();
        assert_eq!(p[[0, 0]], 1.0);
        assert_eq!(p[[0, 1]], 0.0);
        let m = softmax(array![[f64::NEG_INFINITY, 1.0, 1.0]].view()).unwrap();
        assert_eq!(m[[0, 0]], 0.0);
        assert!((m[[0, 1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_all_masked_row_errors() {
        let err = softmax(array![[0.0, 1.0], [f64::NEG_INFINITY, f64::NEG_INFINITY]].view());
        assert!(matches!(err, Err(LnmError::DegenerateRow { row: 1 })));
    }

    #[test]
    fn cross_entropy_examples() {
        let onehot = cross_entropy(array![[0.0, 1.0, 0.0]].view(), &Targets::Hard(&[1])).unwrap();
        assert_eq!(onehot[0], 0.0);
        let uniform = cross_entropy(array![[0.25; 4]].view(), &Targets::Hard(&[2])).unwrap();
        assert!((uniform[0] - 4f64.ln()).abs() < 1e-12);
        let l = cross_entropy(array![[0.7, 0.3]].view(), &Targets::Hard(&[1])).unwrap();
        assert!((l[0] - 1.2039728043259361).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let err = cross_entropy(array![[0.5, 0.5]].view(), &Targets::Hard(&[2]));
        assert!(matches!(err, Err(LnmError::LabelRange { label: 2, k: 2 })));
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let l = cross_entropy(array![[1.0, 0.0]].view(), &Targets::Hard(&[1])).unwrap();
        assert!((l[0] + LOG_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn unknown_loss_name_is_config_error() {
        assert!(matches!(LossKind::from_name("hinge", 3), Err(LnmError::Config(_))));
        for name in ["ce", "sce", "ls-ce", "volmin", "custom-weighted"] {
            assert_eq!(LossKind::from_name(name, 3).unwrap().name(), name);
        }
    }

    #[test]
    fn volmin_identity_matches_ce() {
        let p = array![[0.6, 0.3, 0.1], [0.2, 0.2, 0.6]];
        let labels = [0usize, 2];
        let kind = LossKind::VolMin {
            transition: Array2::eye(3),
            volume_weight: 1e-4,
        };
        let v = evaluate(&kind, p.view(), &Targets::Hard(&labels)).unwrap();
        let c = cross_entropy(p.view(), &Targets::Hard(&labels)).unwrap();
        for (a, b) in v.per_sample.iter().zip(&c) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn volmin_singular_transition() {
        let kind = LossKind::VolMin {
            transition: array![[0.5, 0.5], [0.5, 0.5]],
            volume_weight: 1e-4,
        };
        let err = evaluate(&kind, array![[0.5, 0.5]].view(), &Targets::Hard(&[0]));
        assert!(matches!(err, Err(LnmError::VolumeDegeneracy { .. })));
    }
}
