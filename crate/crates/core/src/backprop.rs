//! Analytic gradients of the depth-weighted training objectives.
//!
//! Both training phases aggregate per-layer losses with weights `i / Σ i`
//! (1-based depth), so deeper layers carry more weight. Gradients are
//! accumulated into a [`ModelGrads`] buffer so a mini-batch can sum sample
//! gradients before an optimizer step.

use crate::error::{Error, Result};
use crate::layer::DenseLayer;
use crate::matrix::Matrix;
use crate::model::{ForwardPass, MultiExitModel, ParamSet};

/// Depth weights `i / Σ_{j=1..n} j`: a convex combination, strictly
/// increasing in depth.
pub fn depth_weights(n: usize) -> Vec<f64> {
    let total = (n * (n + 1) / 2) as f64;
    (1..=n).map(|i| i as f64 / total).collect()
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrads {
            weights: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }

    fn zero(&mut self) {
        self.weights.fill(0.0);
        self.bias.fill(0.0);
    }

    fn scale(&mut self, s: f64) {
        for v in self.weights.as_mut_slice() {
            *v *= s;
        }
        for v in &mut self.bias {
            *v *= s;
        }
    }
}

/// Gradient buffers mirroring a model's parameter shapes.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub backbone: Vec<LayerGrads>,
    pub exit_heads: Vec<LayerGrads>,
    /// One entry per distinct deferral head (a single entry when shared).
    pub deferral: Vec<LayerGrads>,
}

impl ModelGrads {
    pub fn zeros_like(model: &MultiExitModel) -> Self {
        ModelGrads {
            backbone: model.backbone().iter().map(LayerGrads::zeros_like).collect(),
            exit_heads: model
                .exit_heads()
                .iter()
                .map(LayerGrads::zeros_like)
                .collect(),
            deferral: (0..model.deferral_head_count())
                .map(|i| LayerGrads::zeros_like(model.deferral_head(i)))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for g in self
            .backbone
            .iter_mut()
            .chain(&mut self.exit_heads)
            .chain(&mut self.deferral)
        {
            g.zero();
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self
            .backbone
            .iter_mut()
            .chain(&mut self.exit_heads)
            .chain(&mut self.deferral)
        {
            g.scale(s);
        }
    }

    /// Gradient tensors in the order matching
    /// `MultiExitModel::param_slices_mut(set, skip_backbone)`.
    pub(crate) fn slices(&self, set: ParamSet, skip_backbone: bool) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        match set {
            ParamSet::Predictor => {
                let groups: Vec<&LayerGrads> = if skip_backbone {
                    self.exit_heads.iter().collect()
                } else {
                    self.backbone.iter().chain(&self.exit_heads).collect()
                };
                for g in groups {
                    out.push(g.weights.as_slice());
                    out.push(g.bias.as_slice());
                }
            }
            ParamSet::Deferral => {
                for g in &self.deferral {
                    out.push(g.weights.as_slice());
                    out.push(g.bias.as_slice());
                }
            }
        }
        out
    }

    /// Flattened gradient for a parameter set, in `flat_params` order.
    pub fn flat(&self, set: ParamSet) -> Vec<f64> {
        self.slices(set, false).concat()
    }

    /// Index of the first layer (1-based) holding a non-finite gradient, if any.
    pub fn non_finite_layer(&self) -> Option<usize> {
        for (i, (b, e)) in self.backbone.iter().zip(&self.exit_heads).enumerate() {
            let bad = b.weights.as_slice().iter().chain(&b.bias).any(|v| !v.is_finite())
                || e.weights.as_slice().iter().chain(&e.bias).any(|v| !v.is_finite());
            if bad {
                return Some(i + 1);
            }
        }
        for (i, d) in self.deferral.iter().enumerate() {
            if d.weights.as_slice().iter().chain(&d.bias).any(|v| !v.is_finite()) {
                return Some(i + 1);
            }
        }
        None
    }
}

/// Accumulates gradients of the depth-weighted cross-entropy objective for
/// one sample: backbone plus exit heads, deferral heads untouched.
pub fn accumulate_ec_grads(
    model: &MultiExitModel,
    pass: &ForwardPass,
    label: usize,
    freeze_backbone: bool,
    grads: &mut ModelGrads,
) -> Result<()> {
    let n = model.layer_count();
    if label >= model.classes() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            model.classes()
        )));
    }
    let weights = depth_weights(n);
    // d(loss)/d(hidden_i), accumulated from the exit head at i and the
    // backbone layer above.
    let mut d_hidden: Vec<Vec<f64>> = pass.hidden[1..]
        .iter()
        .map(|h| vec![0.0; h.len()])
        .collect();

    for i in 0..n {
        let readout = &pass.readouts[i];
        // Cross-entropy through softmax: d logits = w_i * (p - onehot).
        let mut d_logits: Vec<f64> = readout.class_probs.iter().map(|&p| weights[i] * p).collect();
        d_logits[label] -= weights[i];
        grads.exit_heads[i].weights.add_outer(&d_logits, &pass.hidden[i + 1]);
        for (b, d) in grads.exit_heads[i].bias.iter_mut().zip(&d_logits) {
            *b += d;
        }
        if !freeze_backbone {
            model.exit_heads()[i]
                .weights()
                .matvec_transpose_add(&d_logits, &mut d_hidden[i]);
        }
    }

    if !freeze_backbone {
        for i in (0..n).rev() {
            let act = model.backbone()[i].activation();
            let h = &pass.hidden[i + 1];
            let d_z: Vec<f64> = d_hidden[i]
                .iter()
                .zip(h)
                .map(|(d, &y)| d * act.grad_from_output(y))
                .collect();
            grads.backbone[i].weights.add_outer(&d_z, &pass.hidden[i]);
            for (b, d) in grads.backbone[i].bias.iter_mut().zip(&d_z) {
                *b += d;
            }
            if i > 0 {
                model.backbone()[i]
                    .weights()
                    .matvec_transpose_add(&d_z, &mut d_hidden[i - 1]);
            }
        }
    }
    Ok(())
}

/// Accumulates gradients of the depth-weighted binary cross-entropy objective
/// for one sample into the deferral heads only; the backbone and exit heads
/// stay frozen by construction.
pub fn accumulate_dc_grads(
    model: &MultiExitModel,
    pass: &ForwardPass,
    hard: bool,
    grads: &mut ModelGrads,
) -> Result<()> {
    let n = model.layer_count();
    let weights = depth_weights(n);
    let target = if hard { 1.0 } else { 0.0 };
    let shared = model.shared_dc();
    for (i, (readout, w)) in pass.readouts.iter().zip(&weights).enumerate() {
        let s = readout.hardness;
        // BCE through sigmoid: d logit = w_i * (s - z).
        let d_logit = w * (s - target);
        let slot = if shared { 0 } else { i };
        grads.deferral[slot]
            .weights
            .add_outer(&[d_logit], &pass.hidden[i + 1]);
        grads.deferral[slot].bias[0] += d_logit;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_weights_are_convex_and_increasing() {
        for n in 1..10 {
            let w = depth_weights(n);
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "n={n} sum={sum}");
            assert!(w.windows(2).all(|p| p[1] > p[0]));
        }
    }

    #[test]
    fn ec_grads_leave_deferral_buffers_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let config = ModelConfig {
            input_dim: 3,
            classes: 2,
            hidden_widths: vec![4, 4],
            activation: Activation::Tanh,
            shared_dc: false,
        };
        let mut model = MultiExitModel::new(&config, &mut rng).unwrap();
        // Zero-initialized heads pass no gradient into the backbone; move the
        // predictor parameters off zero first.
        let params: Vec<f64> = model
            .flat_params(crate::model::ParamSet::Predictor)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + 0.01 * ((i % 7) as f64 - 3.0))
            .collect();
        model
            .set_flat_params(crate::model::ParamSet::Predictor, &params)
            .unwrap();
        let pass = model.forward_all(&[0.1, 0.5, -0.3]).unwrap();
        let mut grads = ModelGrads::zeros_like(&model);
        accumulate_ec_grads(&model, &pass, 1, false, &mut grads).unwrap();
        for d in &grads.deferral {
            assert!(d.weights.as_slice().iter().all(|&v| v == 0.0));
            assert!(d.bias.iter().all(|&v| v == 0.0));
        }
        // And backbone gradients are nonzero somewhere.
        assert!(grads.backbone[0].weights.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn dc_grads_touch_only_deferral_buffers() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let config = ModelConfig {
            input_dim: 3,
            classes: 2,
            hidden_widths: vec![4, 4],
            activation: Activation::Tanh,
            shared_dc: false,
        };
        let model = MultiExitModel::new(&config, &mut rng).unwrap();
        let pass = model.forward_all(&[0.1, 0.5, -0.3]).unwrap();
        let mut grads = ModelGrads::zeros_like(&model);
        accumulate_dc_grads(&model, &pass, true, &mut grads).unwrap();
        for g in grads.backbone.iter().chain(&grads.exit_heads) {
            assert!(g.weights.as_slice().iter().all(|&v| v == 0.0));
        }
        assert!(grads.deferral[0].bias[0] != 0.0);
    }

    #[test]
    fn freeze_backbone_zeroes_backbone_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let config = ModelConfig {
            input_dim: 2,
            classes: 2,
            hidden_widths: vec![3, 3],
            activation: Activation::Tanh,
            shared_dc: false,
        };
        let model = MultiExitModel::new(&config, &mut rng).unwrap();
        let pass = model.forward_all(&[0.7, -0.7]).unwrap();
        let mut grads = ModelGrads::zeros_like(&model);
        accumulate_ec_grads(&model, &pass, 0, true, &mut grads).unwrap();
        for g in &grads.backbone {
            assert!(g.weights.as_slice().iter().all(|&v| v == 0.0));
        }
        assert!(grads.exit_heads[0].weights.as_slice().iter().any(|&v| v != 0.0));
    }
}
