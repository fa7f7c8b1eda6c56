//! Transition-matrix estimation: the softmax-parameterized matrix learned by
//! volume minimization, and the percentile anchor estimate refined by an
//! additive slack.

use ndarray::{Array2, ArrayView2};

use crate::error::{LnmError, Result};
use crate::nn::{log_clamped, Targets, LOG_CLAMP};
use crate::noise::TransitionMatrix;

/// Row-stochastic matrix `T = row_softmax(A)` over free reals `A`, with a
/// momentum buffer for its own SGD.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionParam {
    logits: Array2<f64>,
    velocity: Array2<f64>,
}

impl TransitionParam {
    /// Zero logits plus `diag_bias` on the diagonal.
    pub fn new(k: usize, diag_bias: f64) -> Self {
        Self {
            logits: Array2::eye(k) * diag_bias,
            velocity: Array2::zeros((k, k)),
        }
    }

    pub fn k(&self) -> usize {
        self.logits.nrows()
    }

    pub fn matrix(&self) -> Array2<f64> {
        let mut t = self.logits.clone();
        for mut row in t.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let s = row.sum();
            row /= s;
        }
        t
    }

    /// One momentum-SGD step given `dL/dT`, chained through the row softmax.
    pub fn step(&mut self, grad_t: &Array2<f64>, lr: f64, momentum: f64) -> Result<()> {
        if grad_t.iter().any(|v| !v.is_finite()) {
            return Err(LnmError::NumericFault { layer: usize::MAX });
        }
        let t = self.matrix();
        for ((mut v, tr), gr) in self.velocity.rows_mut().into_iter().zip(t.rows()).zip(grad_t.rows()) {
            let dot: f64 = tr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
            for ((vk, &tk), &gk) in v.iter_mut().zip(tr.iter()).zip(gr.iter()) {
                *vk = momentum * *vk + tk * (gk - dot);
            }
        }
        self.logits.scaled_add(-lr, &self.velocity);
        Ok(())
    }
}

fn log_abs_det_and_inverse(t: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let k = t.nrows();
    let m = nalgebra::DMatrix::from_fn(k, k, |i, j| t[[i, j]]);
    let det = m.determinant();
    if !det.is_finite() || det.abs() < 1e-300 {
        return Err(LnmError::VolumeDegeneracy { det });
    }
    let inv = m.try_inverse().ok_or(LnmError::VolumeDegeneracy { det })?;
    Ok((det.abs().ln(), Array2::from_shape_fn((k, k), |(i, j)| inv[(i, j)])))
}

/// Mean forward-corrected cross-entropy plus `λ·log|det T|`.
pub fn volmin_loss(
    probs_clean: ArrayView2<f64>,
    transition: &Array2<f64>,
    observed: &[usize],
    volume_weight: f64,
) -> Result<f64> {
    let (b, k) = probs_clean.dim();
    if transition.dim() != (k, k) {
        return Err(LnmError::Shape {
            context: "transition matrix order",
            expected: k,
            actual: transition.nrows(),
        });
    }
    if b != observed.len() {
        return Err(LnmError::LengthMismatch {
            left: b,
            right: observed.len(),
        });
    }
    let (log_det, _) = log_abs_det_and_inverse(transition)?;
    let noisy = probs_clean.dot(transition);
    let mut total = 0.0;
    for (i, &y) in observed.iter().enumerate() {
        if y >= k {
            return Err(LnmError::LabelRange { label: y, k });
        }
        total -= log_clamped(noisy[[i, y]]);
    }
    Ok(total / b.max(1) as f64 + volume_weight * log_det)
}

/// `dL/dT` of [`volmin_loss`], holding the classifier posteriors fixed.
pub fn volmin_transition_grad(
    probs_clean: ArrayView2<f64>,
    transition: &Array2<f64>,
    targets: &Targets,
    volume_weight: f64,
) -> Result<Array2<f64>> {
    let (b, k) = probs_clean.dim();
    let q = targets.to_distribution(k)?;
    let noisy = probs_clean.dot(transition);
    let mut grad = Array2::<f64>::zeros((k, k));
    for i in 0..b {
        for j in 0..k {
            let qj = q[[i, j]];
            if qj == 0.0 || noisy[[i, j]] <= LOG_CLAMP {
                continue;
            }
            let coef = qj / noisy[[i, j]] / b as f64;
            for c in 0..k {
                grad[[c, j]] -= coef * probs_clean[[i, c]];
            }
        }
    }
    if volume_weight != 0.0 {
        let (_, inv) = log_abs_det_and_inverse(transition)?;
        grad.scaled_add(volume_weight, &inv.t());
    }
    Ok(grad)
}

/// Anchor estimate: for each class `i`, the sample at the given percentile of
/// `p(i|x)` contributes its full posterior as row `i`.
pub fn trevision_estimate(probs: ArrayView2<f64>, percentile: f64) -> Result<TransitionMatrix> {
    let (n, k) = probs.dim();
    if !(percentile > 90.0 && percentile < 100.0) {
        return Err(LnmError::precondition(format!(
            "percentile {percentile} outside (90, 100)"
        )));
    }
    if n == 0 {
        return Err(LnmError::Estimation("no samples to estimate anchors from".into()));
    }
    let pos = ((percentile / 100.0) * (n - 1) as f64).ceil() as usize;
    let mut rows = Array2::<f64>::zeros((k, k));
    for class in 0..k {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| probs[[a, class]].total_cmp(&probs[[b, class]]).then(a.cmp(&b)));
        let anchor = order[pos.min(n - 1)];
        let row = probs.row(anchor);
        let s = row.sum();
        if !(s > 0.0) {
            return Err(LnmError::Estimation(format!(
                "anchor for class {class} has an empty posterior"
            )));
        }
        rows.row_mut(class).assign(&(&row / s));
    }
    // tolerate float residue in the renormalized rows
    for mut row in rows.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    TransitionMatrix::new(rows)
}

/// Row-normalized nonnegative part of `base + slack`.
pub fn project_row_stochastic(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.mapv(|v| v.max(0.0));
    let k = out.ncols();
    for mut row in out.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.fill(1.0 / k as f64);
        }
    }
    out
}
