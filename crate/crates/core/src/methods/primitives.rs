//! Building blocks shared by the strategies: robust losses, selection
//! schedules, label sharpening, mixup and class-frequency thresholds.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Beta, Distribution};

use crate::dataset::ClassHistogram;
use crate::error::{LnmError, Result};
use crate::nn::{cross_entropy, log_clamped, Targets, RCE_LOG_FLOOR};
use crate::rng::RngState;

fn same_shape(p: &ArrayView2<f64>, q: &ArrayView2<f64>) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(LnmError::Shape {
            context: "distribution pair",
            expected: p.nrows(),
            actual: q.nrows(),
        });
    }
    Ok(())
}

/// Reverse cross-entropy `−Σ p log q` with `log q` floored at `log_floor`.
pub fn rce_loss_with_floor(probs: ArrayView2<f64>, target: ArrayView2<f64>, log_floor: f64) -> Result<Vec<f64>> {
    same_shape(&probs, &target)?;
    Ok(probs
        .rows()
        .into_iter()
        .zip(target.rows())
        .map(|(p, q)| {
            -p.iter()
                .zip(q.iter())
                .map(|(&pk, &qk)| pk * crate::nn::loss_rce_log(qk, log_floor))
                .sum::<f64>()
        })
        .collect())
}

pub fn rce_loss(probs: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<Vec<f64>> {
    rce_loss_with_floor(probs, target, RCE_LOG_FLOOR)
}

/// `alpha · CE + beta · RCE` per sample.
pub fn sce_loss(probs: ArrayView2<f64>, targets: &Targets, alpha: f64, beta: f64) -> Result<Vec<f64>> {
    let ce = cross_entropy(probs, targets)?;
    let q = targets.to_distribution(probs.ncols())?;
    let rce = rce_loss(probs, q.view())?;
    Ok(ce.iter().zip(&rce).map(|(c, r)| alpha * c + beta * r).collect())
}

/// `(1 − ε)·one_hot + ε/k`.
pub fn smooth_labels(labels: &[usize], epsilon: f64, k: usize) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(LnmError::precondition(format!(
            "smoothing epsilon {epsilon} outside [0, 1)"
        )));
    }
    let mut q = Targets::Hard(labels).to_distribution(k)?;
    q.mapv_inplace(|v| (1.0 - epsilon) * v + epsilon / k as f64);
    Ok(q)
}

/// Shannon entropy per row, with the log clamp.
pub fn entropy_reg(probs: ArrayView2<f64>) -> Vec<f64> {
    probs
        .rows()
        .into_iter()
        .map(|p| -p.iter().map(|&v| v * log_clamped(v)).sum::<f64>())
        .collect()
}

/// Fraction of each mini-batch kept by small-loss selection at epoch `t`:
/// `1 − η·min(t / ramp, 1)`.
pub fn keep_schedule(epoch: f64, noise_rate: f64, ramp_epochs: f64) -> f64 {
    1.0 - noise_rate * (epoch / ramp_epochs).min(1.0)
}

/// Indices of the `⌈keep·b⌉` smallest losses, ties to the lower index.
/// Returned in ascending index order.
pub fn small_loss_select(losses: &[f64], keep_fraction: f64) -> Result<Vec<usize>> {
    if losses.is_empty() {
        return Err(LnmError::precondition("small-loss selection on an empty batch"));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(LnmError::precondition(format!(
            "keep fraction {keep_fraction} outside (0, 1]"
        )));
    }
    let count = ((keep_fraction * losses.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut chosen = order[..count.min(losses.len())].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// `KL(p‖q) + KL(q‖p)` per row.
pub fn sym_kl(p: ArrayView2<f64>, q: ArrayView2<f64>) -> Result<Vec<f64>> {
    same_shape(&p, &q)?;
    Ok(p.rows()
        .into_iter()
        .zip(q.rows())
        .map(|(a, b)| {
            a.iter()
                .zip(b.iter())
                .map(|(&x, &y)| (x - y) * (log_clamped(x) - log_clamped(y)))
                .sum()
        })
        .collect())
}

/// Temperature sharpening `p^(1/T)` renormalized per row.
pub fn sharpen(p: ArrayView2<f64>, temperature: f64) -> Result<Array2<f64>> {
    if !(temperature > 0.0) {
        return Err(LnmError::precondition(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut out = p.mapv(|v| v.powf(1.0 / temperature));
    for mut row in out.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    Ok(out)
}

/// Convex combination with a fixed `lambda`.
pub fn mixup_with_lambda(
    x1: ArrayView2<f64>,
    q1: ArrayView2<f64>,
    x2: ArrayView2<f64>,
    q2: ArrayView2<f64>,
    lambda: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    same_shape(&x1, &x2)?;
    same_shape(&q1, &q2)?;
    if x1.nrows() != q1.nrows() {
        return Err(LnmError::LengthMismatch {
            left: x1.nrows(),
            right: q1.nrows(),
        });
    }
    let x = &x1 * lambda + &x2 * (1.0 - lambda);
    let q = &q1 * lambda + &q2 * (1.0 - lambda);
    Ok((x, q))
}

/// Mixup with `λ ~ Beta(α, α)` folded to `max(λ, 1 − λ)`. Returns the mixed
/// inputs, mixed targets and the λ used.
pub fn mixup(
    x1: ArrayView2<f64>,
    q1: ArrayView2<f64>,
    x2: ArrayView2<f64>,
    q2: ArrayView2<f64>,
    rng: &mut RngState,
    alpha: f64,
) -> Result<(Array2<f64>, Array2<f64>, f64)> {
    let beta = Beta::new(alpha, alpha).map_err(|e| LnmError::config(format!("mixup alpha {alpha}: {e}")))?;
    let l: f64 = beta.sample(rng);
    let l = l.max(1.0 - l);
    let (x, q) = mixup_with_lambda(x1, q1, x2, q2, l)?;
    Ok((x, q, l))
}

/// Per-class confidence thresholds from class counts.
///
/// `α_k = (log n_k − log n_min) / (log n_max − log n_min + ε)` and
/// `λ_k = λ_head − (λ_head − λ_tail)·α_k`.
pub fn class_thresholds(hist: &ClassHistogram, lambda_head: f64, lambda_tail: f64, epsilon: f64) -> Result<Vec<f64>> {
    if let Some(class) = hist.counts.iter().position(|&c| c == 0) {
        return Err(LnmError::domain(format!("class {class} has no samples")));
    }
    if hist.counts.is_empty() {
        return Err(LnmError::domain("empty histogram"));
    }
    for v in [lambda_head, lambda_tail] {
        if !(v > 0.0 && v < 1.0) {
            return Err(LnmError::domain(format!("threshold bound {v} outside (0, 1)")));
        }
    }
    if !(epsilon > 0.0) {
        return Err(LnmError::domain("epsilon must be positive"));
    }
    let log_min = (hist.min() as f64).ln();
    let log_max = (hist.max() as f64).ln();
    Ok(hist
        .counts
        .iter()
        .map(|&n| {
            let alpha = ((n as f64).ln() - log_min) / (log_max - log_min + epsilon);
            lambda_head - (lambda_head - lambda_tail) * alpha
        })
        .collect())
}
