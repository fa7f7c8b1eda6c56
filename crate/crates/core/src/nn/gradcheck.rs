use ndarray::ArrayView2;

use super::loss::{LossKind, Targets};
use super::model::{backward, mean_loss, MlpModel};
use crate::error::{LnmError, Result};

/// Maximum relative disagreement between the analytic gradient and central
/// finite differences, taken over every parameter.
pub fn grad_check(
    model: &MlpModel,
    batch: ArrayView2<f64>,
    targets: &Targets,
    kind: &LossKind,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(LnmError::precondition(format!("eps must lie in (0, 1e-2], got {eps}")));
    }
    let analytic: Vec<f64> = backward(model, batch, targets, kind)?.values().copied().collect();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (idx, &a) in analytic.iter().enumerate() {
        let original = *probe.params_mut().nth(idx).unwrap();
        *probe.params_mut().nth(idx).unwrap() = original + eps;
        let plus = mean_loss(&probe, batch, targets, kind)?;
        *probe.params_mut().nth(idx).unwrap() = original - eps;
        let minus = mean_loss(&probe, batch, targets, kind)?;
        *probe.params_mut().nth(idx).unwrap() = original;
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
