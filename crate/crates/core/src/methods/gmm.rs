//! Two-component one-dimensional Gaussian mixture over per-sample losses.

use crate::error::{LnmError, Result};

const VAR_FLOOR: f64 = 1e-4;
const EM_ITERS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    /// Component means on the min-max normalized scale, low component first.
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
    /// Min and max of the raw losses used for normalization.
    pub loss_range: (f64, f64),
    /// Posterior of the low-mean (clean) component per sample.
    pub clean_posterior: Vec<f64>,
}

impl GmmFit {
    /// Component means mapped back to the raw loss scale.
    pub fn raw_means(&self) -> [f64; 2] {
        let (lo, hi) = self.loss_range;
        self.means.map(|m| lo + m * (hi - lo))
    }

    pub fn clean_set(&self, threshold: f64) -> Vec<usize> {
        (0..self.clean_posterior.len())
            .filter(|&i| self.clean_posterior[i] >= threshold)
            .collect()
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + var.ln() + (2.0 * std::f64::consts::PI).ln())
}

/// Responsibility of component 0 at `x`.
fn posterior_low(x: f64, means: &[f64; 2], vars: &[f64; 2], weights: &[f64; 2]) -> f64 {
    let l0 = weights[0].ln() + log_normal(x, means[0], vars[0]);
    let l1 = weights[1].ln() + log_normal(x, means[1], vars[1]);
    1.0 / (1.0 + (l1 - l0).exp())
}

/// EM fit with means initialized at the normalized extremes.
///
/// The clean posterior is made non-increasing in the loss: inputs are clamped
/// to the interval between the two means before evaluating the posterior, and
/// a running minimum over ascending losses removes the remaining tail
/// reversals that unequal variances can produce.
pub fn gmm2_fit(losses: &[f64]) -> Result<GmmFit> {
    if losses.len() < 10 {
        return Err(LnmError::precondition(format!(
            "mixture fit needs at least 10 losses, got {}",
            losses.len()
        )));
    }
    if losses.iter().any(|v| !v.is_finite()) {
        return Err(LnmError::precondition("mixture fit needs finite losses"));
    }
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(LnmError::DegenerateFit);
    }
    let x: Vec<f64> = losses.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let n = x.len() as f64;
    let mean_all = x.iter().sum::<f64>() / n;
    let var_all = (x.iter().map(|v| (v - mean_all).powi(2)).sum::<f64>() / n).max(VAR_FLOOR);

    let mut means = [0.0, 1.0];
    let mut vars = [var_all, var_all];
    let mut weights = [0.5, 0.5];
    let mut resp = vec![0.0; x.len()];
    for _ in 0..EM_ITERS {
        for (r, &xi) in resp.iter_mut().zip(&x) {
            *r = posterior_low(xi, &means, &vars, &weights);
        }
        let n0: f64 = resp.iter().sum();
        let n1 = n - n0;
        let totals = [n0, n1];
        for c in 0..2 {
            if totals[c] <= f64::EPSILON {
                continue;
            }
            let w = |i: usize| if c == 0 { resp[i] } else { 1.0 - resp[i] };
            let m = (0..x.len()).map(|i| w(i) * x[i]).sum::<f64>() / totals[c];
            let v = (0..x.len()).map(|i| w(i) * (x[i] - m).powi(2)).sum::<f64>() / totals[c];
            means[c] = m;
            vars[c] = v.max(VAR_FLOOR);
            weights[c] = (totals[c] / n).clamp(1e-12, 1.0);
        }
    }
    if means[0] > means[1] {
        means.swap(0, 1);
        vars.swap(0, 1);
        weights.swap(0, 1);
    }
    let mut posterior: Vec<f64> = x
        .iter()
        .map(|&xi| posterior_low(xi.clamp(means[0], means[1]), &means, &vars, &weights))
        .collect();
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut running = f64::INFINITY;
    for &i in &order {
        running = running.min(posterior[i]);
        posterior[i] = running;
    }
    Ok(GmmFit {
        means,
        variances: vars,
        weights,
        loss_range: (lo, hi),
        clean_posterior: posterior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_or_constant() {
        assert!(matches!(gmm2_fit(&[1.0; 5]), Err(LnmError::Precondition(_))));
        assert!(matches!(gmm2_fit(&[0.3; 12]), Err(LnmError::DegenerateFit)));
        let mut bad = vec![0.1; 12];
        bad[3] = f64::NAN;
        assert!(gmm2_fit(&bad).is_err());
    }

    #[test]
    fn exact_bimodal_split() {
        let losses: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 0.1 } else { 2.0 }).collect();
        let fit = gmm2_fit(&losses).unwrap();
        let clean = fit.clean_set(0.5);
        assert_eq!(clean, (0..40).step_by(2).collect::<Vec<_>>());
    }
}
