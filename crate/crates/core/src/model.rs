//! Multi-exit classifier: a dense backbone with an exit head (class
//! probabilities) and a deferral head (hardness score) attached at every layer.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::{sigmoid, softmax, Activation};
use crate::error::{Error, Result};
use crate::layer::DenseLayer;

pub const CHECKPOINT_FORMAT: &str = "exitgate-model";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Shape and flags for building a [`MultiExitModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub classes: usize,
    /// One entry per backbone layer; at least two layers.
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    /// When set, every layer's deferral head references the same parameters.
    #[serde(default)]
    pub shared_dc: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be > 0".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if self.hidden_widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least 2 backbone layers".into(),
            ));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be > 0".into()));
        }
        if self.shared_dc && self.hidden_widths.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::InvalidArgument(
                "shared deferral head requires uniform hidden widths".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum DeferralHeads {
    PerLayer(Vec<DenseLayer>),
    Shared(DenseLayer),
}

/// Per-layer readout produced during a forward pass.
#[derive(Debug, Clone)]
pub struct LayerReadout {
    /// 1-based depth of the layer that produced this readout.
    pub layer: usize,
    pub class_probs: Vec<f64>,
    /// Maximum class probability.
    pub confidence: f64,
    /// Deferral-head score in [0, 1]; higher means harder.
    pub hardness: f64,
}

impl LayerReadout {
    /// Most probable class; exact ties resolve to the lowest class index.
    pub fn predicted_class(&self) -> usize {
        let mut best = 0;
        for (c, &p) in self.class_probs.iter().enumerate() {
            if p > self.class_probs[best] {
                best = c;
            }
        }
        best
    }
}

/// Everything produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `hidden[0]` is the input; `hidden[i]` is the state after layer `i`.
    pub hidden: Vec<Vec<f64>>,
    /// One readout per backbone layer.
    pub readouts: Vec<LayerReadout>,
}

/// Which parameter group an operation addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSet {
    /// Backbone layers plus exit heads (phase-1 trainables).
    Predictor,
    /// Deferral heads only (phase-3 trainables).
    Deferral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiExitModel {
    input_dim: usize,
    classes: usize,
    backbone: Vec<DenseLayer>,
    exit_heads: Vec<DenseLayer>,
    deferral: DeferralHeads,
}

impl MultiExitModel {
    /// Builds a model with a Xavier-initialized backbone and zero-initialized
    /// heads, so an untrained model emits uniform class probabilities and
    /// hardness 0.5 everywhere.
    pub fn new<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut backbone = Vec::with_capacity(config.hidden_widths.len());
        let mut exit_heads = Vec::with_capacity(config.hidden_widths.len());
        let mut in_dim = config.input_dim;
        for &width in &config.hidden_widths {
            backbone.push(DenseLayer::xavier(in_dim, width, config.activation, rng)?);
            exit_heads.push(DenseLayer::zeros(width, config.classes, Activation::Identity)?);
            in_dim = width;
        }
        let deferral = if config.shared_dc {
            DeferralHeads::Shared(DenseLayer::zeros(
                config.hidden_widths[0],
                1,
                Activation::Identity,
            )?)
        } else {
            DeferralHeads::PerLayer(
                config
                    .hidden_widths
                    .iter()
                    .map(|&w| DenseLayer::zeros(w, 1, Activation::Identity))
                    .collect::<Result<_>>()?,
            )
        };
        Ok(MultiExitModel {
            input_dim: config.input_dim,
            classes: config.classes,
            backbone,
            exit_heads,
            deferral,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.backbone.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn shared_dc(&self) -> bool {
        matches!(self.deferral, DeferralHeads::Shared(_))
    }

    pub fn activation(&self) -> Activation {
        self.backbone[0].activation()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.backbone.iter().map(|l| l.out_dim()).collect()
    }

    pub(crate) fn backbone(&self) -> &[DenseLayer] {
        &self.backbone
    }

    pub(crate) fn exit_heads(&self) -> &[DenseLayer] {
        &self.exit_heads
    }

    /// The deferral head serving layer `i` (0-based); with shared parameters
    /// every layer maps to the same head.
    pub(crate) fn deferral_head(&self, i: usize) -> &DenseLayer {
        match &self.deferral {
            DeferralHeads::PerLayer(heads) => &heads[i],
            DeferralHeads::Shared(head) => head,
        }
    }

    /// Number of distinct deferral-head parameter groups (1 when shared).
    pub(crate) fn deferral_head_count(&self) -> usize {
        match &self.deferral {
            DeferralHeads::PerLayer(heads) => heads.len(),
            DeferralHeads::Shared(_) => 1,
        }
    }

    /// Runs the full backbone, producing one readout per layer.
    pub fn forward_all(&self, x: &[f64]) -> Result<ForwardPass> {
        if x.len() != self.input_dim {
            return Err(Error::shape("model input", self.input_dim, x.len()));
        }
        let n = self.layer_count();
        let mut hidden = Vec::with_capacity(n + 1);
        hidden.push(x.to_vec());
        let mut readouts = Vec::with_capacity(n);
        for i in 0..n {
            let h = self.backbone[i]
                .forward(&hidden[i])
                .map_err(|e| at_layer(e, i + 1))?;
            let logits = self.exit_heads[i].forward(&h).map_err(|e| at_layer(e, i + 1))?;
            let class_probs = softmax(&logits)?;
            let confidence = class_probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dc_logit = self
                .deferral_head(i)
                .forward(&h)
                .map_err(|e| at_layer(e, i + 1))?[0];
            readouts.push(LayerReadout {
                layer: i + 1,
                class_probs,
                confidence,
                hardness: sigmoid(dc_logit),
            });
            hidden.push(h);
        }
        Ok(ForwardPass { hidden, readouts })
    }

    /// True-class probability at every layer: element `i` is `P̂_{i+1}(label | x)`.
    pub fn true_class_probs(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        if label >= self.classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                self.classes
            )));
        }
        let pass = self.forward_all(x)?;
        Ok(pass.readouts.iter().map(|r| r.class_probs[label]).collect())
    }

    fn deferral_heads_slice(&self) -> &[DenseLayer] {
        match &self.deferral {
            DeferralHeads::PerLayer(heads) => heads,
            DeferralHeads::Shared(head) => std::slice::from_ref(head),
        }
    }

    fn param_layers(&self, set: ParamSet) -> Vec<&DenseLayer> {
        match set {
            ParamSet::Predictor => self.backbone.iter().chain(&self.exit_heads).collect(),
            ParamSet::Deferral => self.deferral_heads_slice().iter().collect(),
        }
    }

    /// Flattens a parameter group into one vector (weights then bias, layer by
    /// layer). The same ordering is used by [`Self::set_flat_params`].
    pub fn flat_params(&self, set: ParamSet) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in self.param_layers(set) {
            out.extend_from_slice(layer.weights().as_slice());
            out.extend_from_slice(layer.bias());
        }
        out
    }

    pub fn param_count(&self, set: ParamSet) -> usize {
        self.param_layers(set).iter().map(|l| l.param_count()).sum()
    }

    /// Writes a flat vector back into a parameter group.
    pub fn set_flat_params(&mut self, set: ParamSet, values: &[f64]) -> Result<()> {
        let expected = self.param_count(set);
        if values.len() != expected {
            return Err(Error::shape("flat parameters", expected, values.len()));
        }
        let mut offset = 0;
        for slice in self.param_slices_mut(set, false) {
            slice.copy_from_slice(&values[offset..offset + slice.len()]);
            offset += slice.len();
        }
        Ok(())
    }

    /// Mutable tensor views for the optimizer, in the flat-param ordering.
    /// With `skip_backbone` the predictor set excludes backbone tensors.
    pub(crate) fn param_slices_mut(&mut self, set: ParamSet, skip_backbone: bool) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        match set {
            ParamSet::Predictor => {
                if !skip_backbone {
                    for l in &mut self.backbone {
                        let (w, b) = l.split_mut();
                        out.push(w);
                        out.push(b);
                    }
                }
                for l in &mut self.exit_heads {
                    let (w, b) = l.split_mut();
                    out.push(w);
                    out.push(b);
                }
            }
            ParamSet::Deferral => {
                let heads = match &mut self.deferral {
                    DeferralHeads::PerLayer(heads) => heads.as_mut_slice(),
                    DeferralHeads::Shared(head) => std::slice::from_mut(head),
                };
                for l in heads {
                    let (w, b) = l.split_mut();
                    out.push(w);
                    out.push(b);
                }
            }
        }
        out
    }

    pub(crate) fn tensor_sizes(&self, set: ParamSet, skip_backbone: bool) -> Vec<usize> {
        let layers: Vec<&DenseLayer> = match set {
            ParamSet::Predictor if skip_backbone => self.exit_heads.iter().collect(),
            _ => self.param_layers(set),
        };
        layers
            .iter()
            .flat_map(|l| [l.weights().as_slice().len(), l.bias().len()])
            .collect()
    }

    /// Validates dimensions and flags; called after deserialization.
    pub fn check(&self) -> Result<()> {
        let n = self.backbone.len();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "checkpoint must have at least 2 layers".into(),
            ));
        }
        if self.exit_heads.len() != n {
            return Err(Error::shape("exit heads", n, self.exit_heads.len()));
        }
        if let DeferralHeads::PerLayer(heads) = &self.deferral {
            if heads.len() != n {
                return Err(Error::shape("deferral heads", n, heads.len()));
            }
        }
        let mut in_dim = self.input_dim;
        for (i, layer) in self.backbone.iter().enumerate() {
            layer.check().map_err(|e| at_layer(e, i + 1))?;
            if layer.in_dim() != in_dim {
                return Err(Error::shape("backbone input", in_dim, layer.in_dim()));
            }
            if self.exit_heads[i].in_dim() != layer.out_dim()
                || self.exit_heads[i].out_dim() != self.classes
            {
                return Err(Error::shape(
                    "exit head",
                    layer.out_dim(),
                    self.exit_heads[i].in_dim(),
                ));
            }
            let dc = self.deferral_head(i);
            if dc.in_dim() != layer.out_dim() || dc.out_dim() != 1 {
                return Err(Error::shape("deferral head", layer.out_dim(), dc.in_dim()));
            }
            in_dim = layer.out_dim();
        }
        Ok(())
    }

    /// Serializes to the versioned checkpoint document.
    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let text = serde_json::to_string_pretty(&doc)?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Loads and validates a checkpoint document.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let doc: CheckpointDoc = serde_json::from_str(&text)?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unknown checkpoint format {:?}",
                doc.format
            )));
        }
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint version {}",
                doc.version
            )));
        }
        doc.model.check()?;
        Ok(doc.model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    model: MultiExitModel,
}

fn at_layer(e: Error, layer: usize) -> Error {
    match e {
        Error::ShapeMismatch {
            context,
            expected,
            got,
        } => Error::ShapeMismatch {
            context: format!("layer {layer} {context}"),
            expected,
            got,
        },
        other => other,
    }
}
