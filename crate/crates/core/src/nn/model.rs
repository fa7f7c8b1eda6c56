use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, Normal};

use super::loss::{self, LossKind, Targets};
use crate::error::{LnmError, Result};
use crate::rng::RngState;

/// One affine layer. Weights are stored `[fan_in, fan_out]` so that a batch
/// `x` of shape `[b, fan_in]` maps to `x · W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    layers: Vec<Dense>,
}

impl MlpModel {
    /// He-initialized network: weights ~ N(0, 2 / fan_in), zero biases.
    pub fn new(layer_sizes: &[usize], rng: &mut RngState) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                Dense {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    /// Builds a model from explicit layers, checking that they chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(LnmError::config("a model needs at least one layer"));
        }
        let mut sizes = vec![layers[0].weights.nrows()];
        for (i, layer) in layers.iter().enumerate() {
            let expected = *sizes.last().unwrap();
            if layer.weights.nrows() != expected {
                return Err(LnmError::Shape {
                    context: "layer fan-in",
                    expected,
                    actual: layer.weights.nrows(),
                });
            }
            if layer.bias.len() != layer.weights.ncols() {
                return Err(LnmError::Shape {
                    context: if i == 0 { "first layer bias" } else { "layer bias" },
                    expected: layer.weights.ncols(),
                    actual: layer.bias.len(),
                });
            }
            sizes.push(layer.weights.ncols());
        }
        Self::check_sizes(&sizes)?;
        Ok(Self {
            layer_sizes: sizes,
            layers,
        })
    }

    fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(LnmError::config(format!(
                "layer_sizes needs at least input and output widths, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(LnmError::config(format!(
                "layer widths must be positive, got {layer_sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(LnmError::Shape {
                context: "forward batch width",
                expected: self.input_dim(),
                actual: batch.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&batch)?;
        let last = self.layers.len() - 1;
        let mut act = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            act = act.dot(&layer.weights) + &layer.bias;
            if i < last {
                act.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(act)
    }

    pub fn predict_proba(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        loss::softmax(self.forward(batch)?.view())
    }

    /// Argmax class per row; ties resolve to the lower index.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok(logits.rows().into_iter().map(|r| argmax(r.iter())).collect())
    }

    /// Forward pass keeping every layer input and pre-activation.
    fn forward_cached(&self, batch: ArrayView2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut act = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = act.dot(&layer.weights) + &layer.bias;
            inputs.push(act);
            act = if i < last { pre.mapv(|v| v.max(0.0)) } else { pre };
        }
        (inputs, act)
    }

    /// Iterates parameters in a fixed order: per layer, weights then bias.
    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

pub(crate) fn argmax<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Parameter-shaped container for gradients (and optimizer buffers).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Dense>,
}

impl GradientSet {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn is_congruent(&self, model: &MlpModel) -> bool {
        self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.weights.dim() == l.weights.dim() && g.bias.dim() == l.bias.dim())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(scale, &b.weights);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

/// Result of a combined loss evaluation and backward pass.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub mean_loss: f64,
    pub per_sample: Vec<f64>,
    pub probs: Array2<f64>,
    pub grads: GradientSet,
}

/// Mean-over-batch loss and its gradient with respect to every parameter.
pub fn loss_and_grad(model: &MlpModel, batch: ArrayView2<f64>, targets: &Targets, kind: &LossKind) -> Result<LossGrad> {
    model.check_batch(&batch)?;
    let b = batch.nrows();
    if b == 0 {
        return Err(LnmError::precondition("backward needs a nonempty batch"));
    }
    let (inputs, logits) = model.forward_cached(batch);
    let probs = loss::softmax(logits.view())?;
    let eval = loss::evaluate(kind, probs.view(), targets)?;

    // dL/dz = p ⊙ (g − <g, p>) per row, averaged over the batch.
    let mut delta = Array2::<f64>::zeros(probs.raw_dim());
    Zip::from(delta.rows_mut())
        .and(probs.rows())
        .and(eval.dloss_dprob.rows())
        .for_each(|mut d, p, g| {
            let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            for ((dk, &pk), &gk) in d.iter_mut().zip(p.iter()).zip(g.iter()) {
                *dk = pk * (gk - dot) / b as f64;
            }
        });

    let mut grads = GradientSet::zeros_like(model);
    for li in (0..model.layers.len()).rev() {
        let input = &inputs[li];
        grads.layers[li].weights = input.t().dot(&delta);
        grads.layers[li].bias = delta.sum_axis(Axis(0));
        if li > 0 {
            let mut upstream = delta.dot(&model.layers[li].weights.t());
            // inputs[li] is relu(pre) of the previous layer, so zero entries mark inactive units
            Zip::from(&mut upstream).and(input).for_each(|u, &a| {
                if a <= 0.0 {
                    *u = 0.0;
                }
            });
            delta = upstream;
        }
    }

    let mean_loss = eval.per_sample.iter().sum::<f64>() / b as f64;
    Ok(LossGrad {
        mean_loss,
        per_sample: eval.per_sample,
        probs,
        grads,
    })
}

pub fn backward(model: &MlpModel, batch: ArrayView2<f64>, targets: &Targets, kind: &LossKind) -> Result<GradientSet> {
    Ok(loss_and_grad(model, batch, targets, kind)?.grads)
}

/// Mean loss only, for finite-difference checks.
pub(crate) fn mean_loss(model: &MlpModel, batch: ArrayView2<f64>, targets: &Targets, kind: &LossKind) -> Result<f64> {
    let probs = model.predict_proba(batch)?;
    let eval = loss::evaluate(kind, probs.view(), targets)?;
    Ok(eval.per_sample.iter().sum::<f64>() / batch.nrows() as f64)
}
