use crate::nn::{GradientSet, MlpModel};

/// Marks the `⌈ρ·P⌉` parameters with the largest `|g·w|` as critical.
/// Ties go to the lower flat index; the mask follows parameter order
/// (per layer, weights then bias).
pub fn cdr_partition(grads: &GradientSet, params: &MlpModel, rho: f64) -> Vec<bool> {
    let scores: Vec<f64> = grads
        .values()
        .zip(
            params
                .layers()
                .iter()
                .flat_map(|l| l.weights.iter().chain(l.bias.iter())),
        )
        .map(|(g, w)| (g * w).abs())
        .collect();
    let total = scores.len();
    let count = ((rho.clamp(0.0, 1.0) * total as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut mask = vec![false; total];
    for &i in &order[..count.min(total)] {
        mask[i] = true;
    }
    mask
}

/// Zeroes the gradient of non-critical parameters; weight decay still reaches
/// them through the optimizer.
pub fn mask_gradients(grads: &mut GradientSet, mask: &[bool]) {
    for (g, &critical) in grads.values_mut().zip(mask) {
        if !critical {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn fixture() -> (MlpModel, GradientSet) {
        let model = MlpModel::new(&[3, 4, 2], &mut RngState::new(3)).unwrap();
        let mut g = GradientSet::zeros_like(&model);
        for (i, v) in g.values_mut().enumerate() {
            if i % 3 != 0 {
                *v = 0.1 + 0.01 * i as f64;
            }
        }
        (model, g)
    }

    #[test]
    fn rho_one_marks_everything() {
        let (m, g) = fixture();
        assert!(cdr_partition(&g, &m, 1.0).iter().all(|&c| c));
    }

    #[test]
    fn exact_critical_count() {
        let (m, g) = fixture();
        let p = m.num_params();
        for rho in [0.1, 0.33, 0.5, 0.9] {
            let n = cdr_partition(&g, &m, rho).iter().filter(|&&c| c).count();
            assert_eq!(n, (rho * p as f64).ceil() as usize);
        }
    }

    #[test]
    fn zero_gradients_never_critical() {
        let (m, g) = fixture();
        let mask = cdr_partition(&g, &m, 0.3);
        for (c, gv) in mask.iter().zip(g.values()) {
            if *gv == 0.0 {
                assert!(!c);
            }
        }
    }
}
