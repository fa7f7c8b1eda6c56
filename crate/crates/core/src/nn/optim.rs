use super::model::{GradientSet, MlpModel};
use crate::error::{LnmError, Result};

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: GradientSet,
}

impl OptimState {
    pub fn new(model: &MlpModel, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(LnmError::config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(LnmError::config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(LnmError::config(format!(
                "weight decay must be nonnegative, got {weight_decay}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: GradientSet::zeros_like(model),
        })
    }

    pub fn velocity(&self) -> &GradientSet {
        &self.velocity
    }
}

/// `v ← momentum·v + g + weight_decay·w; w ← w − lr·v`.
///
/// Gradients are validated before any parameter is touched, so a numeric
/// fault leaves both the model and the optimizer unchanged.
pub fn sgd_step(model: &mut MlpModel, grads: &GradientSet, opt: &mut OptimState) -> Result<()> {
    if !grads.is_congruent(model) || !opt.velocity.is_congruent(model) {
        return Err(LnmError::Shape {
            context: "gradient/model layer count",
            expected: model.layers().len(),
            actual: grads.layers.len(),
        });
    }
    for (i, g) in grads.layers.iter().enumerate() {
        if g.weights.iter().chain(g.bias.iter()).any(|v| !v.is_finite()) {
            return Err(LnmError::NumericFault { layer: i });
        }
    }
    let (lr, mom, wd) = (opt.learning_rate, opt.momentum, opt.weight_decay);
    for ((layer, g), v) in model
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut opt.velocity.layers)
    {
        ndarray::Zip::from(&mut layer.weights)
            .and(&g.weights)
            .and(&mut v.weights)
            .for_each(|w, &g, v| {
                *v = mom * *v + g + wd * *w;
                *w -= lr * *v;
            });
        ndarray::Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut v.bias)
            .for_each(|w, &g, v| {
                *v = mom * *v + g + wd * *w;
                *w -= lr * *v;
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn setup() -> (MlpModel, GradientSet) {
        let model = MlpModel::new(&[3, 4, 2], &mut RngState::new(1)).unwrap();
        let mut g = GradientSet::zeros_like(&model);
        for (i, v) in g.values_mut().enumerate() {
            *v = 0.01 * (i as f64 - 10.0);
        }
        (model, g)
    }

    #[test]
    fn plain_step() {
        let (mut m, g) = setup();
        let before = m.clone();
        let mut opt = OptimState::new(&m, 0.1, 0.0, 0.0).unwrap();
        sgd_step(&mut m, &g, &mut opt).unwrap();
        let mut expected = before.clone();
        for (w, gv) in expected.params_mut().zip(g.values()) {
            *w -= 0.1 * gv;
        }
        assert_eq!(m, expected);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let (mut m, g) = setup();
        let before = m.clone();
        let mut opt = OptimState::new(&m, 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut m, &GradientSet::zeros_like(&before), &mut opt).unwrap();
        assert_eq!(m, before);
        let _ = g;
    }

    #[test]
    fn momentum_unrolls() {
        let (mut m, g) = setup();
        let w0 = m.clone();
        let mut opt = OptimState::new(&m, 0.5, 0.9, 0.0).unwrap();
        sgd_step(&mut m, &g, &mut opt).unwrap();
        let w1 = m.clone();
        sgd_step(&mut m, &g, &mut opt).unwrap();
        let mut p0 = w0.clone();
        let mut p1 = w1.clone();
        let mut p2 = m.clone();
        let it = p0
            .params_mut()
            .zip(p1.params_mut())
            .zip(p2.params_mut())
            .zip(g.values());
        for (((a, b), c), gv) in it {
            assert!(((*b - *a) + 0.5 * gv).abs() < 1e-12);
            assert!(((*c - *b) + 0.5 * 1.9 * gv).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_names_layer_and_leaves_model() {
        let (mut m, mut g) = setup();
        g.layers[1].bias[0] = f64::NAN;
        let before = m.clone();
        let mut opt = OptimState::new(&m, 0.1, 0.9, 1e-4).unwrap();
        let err = sgd_step(&mut m, &g, &mut opt).unwrap_err();
        assert!(matches!(err, LnmError::NumericFault { layer: 1 }));
        assert_eq!(m, before);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let (m, _) = setup();
        assert!(OptimState::new(&m, 0.0, 0.0, 0.0).is_err());
        assert!(OptimState::new(&m, 0.1, 1.0, 0.0).is_err());
        assert!(OptimState::new(&m, 0.1, 0.5, -1.0).is_err());
    }
}
