//! Phase 1: joint training of the backbone and exit heads under the
//! depth-weighted cross-entropy objective.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::backprop::{accumulate_ec_grads, depth_weights, ModelGrads};
use crate::data::{shuffle, Dataset};
use crate::error::{Error, Result};
use crate::model::{LayerReadout, MultiExitModel, ParamSet};
use crate::seeding::phase_rng;

const PROB_FLOOR: f64 = 1e-12;

/// Hyperparameters for exit-classifier training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Early stopping: stop after this many epochs without improvement of the
    /// depth-weighted validation loss.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Fraction of the provided dataset carved off for early stopping.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    /// Train only the exit heads, leaving the backbone at its current
    /// parameters (ablation switch).
    #[serde(default)]
    pub freeze_backbone: bool,
}

fn default_patience() -> usize {
    2
}

fn default_validation_fraction() -> f64 {
    0.15
}

/// A forward pass that stops producing finite values mid-training means the
/// parameters diverged, not that the caller passed a bad argument.
pub(crate) fn diverged(e: Error) -> Error {
    match e {
        Error::InvalidArgument(reason) => Error::Training {
            layer: 0,
            reason: format!("forward pass diverged: {reason}"),
        },
        other => other,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be > 0".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be > 0".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "validation_fraction must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLoss {
    /// `Σ i·L_i / Σ i`.
    pub aggregate: f64,
    pub per_layer: Vec<f64>,
    /// How many per-layer terms hit the probability floor.
    pub clamped: usize,
}

/// Depth-weighted cross-entropy over the per-layer readouts. A zero
/// probability at the true class is clamped to 1e-12 and counted.
pub fn ec_loss(readouts: &[LayerReadout], label: usize) -> Result<WeightedLoss> {
    if readouts.is_empty() {
        return Err(Error::InvalidArgument("no readouts".into()));
    }
    let mut per_layer = Vec::with_capacity(readouts.len());
    let mut clamped = 0;
    for r in readouts {
        let p = *r.class_probs.get(label).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                r.class_probs.len()
            ))
        })?;
        let p = if p < PROB_FLOOR {
            clamped += 1;
            PROB_FLOOR
        } else {
            p
        };
        per_layer.push(-p.ln());
    }
    let weights = depth_weights(readouts.len());
    let aggregate = per_layer.iter().zip(&weights).map(|(l, w)| l * w).sum();
    Ok(WeightedLoss {
        aggregate,
        per_layer,
        clamped,
    })
}

/// Per-epoch statistics for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEpochStats {
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean depth-weighted training loss over the epoch's batches.
    pub train_loss: f64,
    /// Depth-weighted loss on the held-out slice.
    pub val_loss: f64,
    pub per_layer: Vec<LayerEpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were restored (best validation loss), when any
    /// epoch ran.
    pub best_epoch: Option<usize>,
    pub clamp_warnings: usize,
}

/// Trains backbone and exit heads; deferral heads are untouched. The model is
/// left at the parameters of the best-validation epoch.
pub fn train_ecs(
    model: &mut MultiExitModel,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    if dataset.dims() != model.input_dim() {
        return Err(Error::shape("training features", model.input_dim(), dataset.dims()));
    }
    if let Some(&bad) = dataset.labels().iter().find(|&&l| l >= model.classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            model.classes()
        )));
    }

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: None,
        clamp_warnings: 0,
    };
    if config.epochs == 0 {
        return Ok(report);
    }

    // Seeded validation split for early stopping.
    let m = dataset.len();
    let mut indices: Vec<usize> = (0..m).collect();
    let mut rng = phase_rng(config.seed, "ec-split");
    shuffle(&mut indices, &mut rng);
    let val_count = ((m as f64 * config.validation_fraction).round() as usize).clamp(1, m - 1);
    let (train_idx, val_idx) = indices.split_at(m - val_count);
    let train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut adam = Adam::new(
        config.learning_rate,
        &model.tensor_sizes(ParamSet::Predictor, config.freeze_backbone),
    )?;
    let mut grads = ModelGrads::zeros_like(model);
    let n = model.layer_count();

    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut epochs_since_best = 0;

    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        let mut epoch_rng = phase_rng(config.seed, &format!("ec-epoch{epoch}"));
        shuffle(&mut order, &mut epoch_rng);

        let mut epoch_loss = 0.0;
        let mut layer_loss = vec![0.0; n];
        for batch in order.chunks(config.batch_size) {
            grads.zero();
            for &i in batch {
                let pass = model
                    .forward_all(dataset.feature_row(i))
                    .map_err(diverged)?;
                let loss = ec_loss(&pass.readouts, dataset.label(i))?;
                if !loss.aggregate.is_finite() {
                    return Err(Error::Training {
                        layer: 0,
                        reason: "training loss diverged to a non-finite value".into(),
                    });
                }
                report.clamp_warnings += loss.clamped;
                epoch_loss += loss.aggregate;
                for (acc, l) in layer_loss.iter_mut().zip(&loss.per_layer) {
                    *acc += l;
                }
                accumulate_ec_grads(model, &pass, dataset.label(i), config.freeze_backbone, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(layer) = grads.non_finite_layer() {
                return Err(Error::Training {
                    layer,
                    reason: "non-finite gradient".into(),
                });
            }
            adam.step(
                &mut model.param_slices_mut(ParamSet::Predictor, config.freeze_backbone),
                &grads.slices(ParamSet::Predictor, config.freeze_backbone),
            )?;
        }
        let samples = train_idx.len() as f64;
        epoch_loss /= samples;
        for l in &mut layer_loss {
            *l /= samples;
        }

        // Validation pass: depth-weighted loss plus per-layer accuracy.
        let mut val_loss = 0.0;
        let mut correct = vec![0usize; n];
        for &i in &val_idx {
            let pass = model
                .forward_all(dataset.feature_row(i))
                .map_err(diverged)?;
            val_loss += ec_loss(&pass.readouts, dataset.label(i))?.aggregate;
            for (layer, r) in pass.readouts.iter().enumerate() {
                if r.predicted_class() == dataset.label(i) {
                    correct[layer] += 1;
                }
            }
        }
        val_loss /= val_idx.len() as f64;

        report.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss,
            val_loss,
            per_layer: (0..n)
                .map(|layer| LayerEpochStats {
                    train_loss: layer_loss[layer],
                    val_accuracy: correct[layer] as f64 / val_idx.len() as f64,
                })
                .collect(),
        });

        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, model.flat_params(ParamSet::Predictor)));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                break;
            }
        }
    }

    if let Some((_, epoch, params)) = best {
        model.set_flat_params(ParamSet::Predictor, &params)?;
        report.best_epoch = Some(epoch);
    }
    Ok(report)
}

/// Writes the training log: one row per (epoch, layer).
pub fn write_train_log(report: &TrainReport, path: &Path) -> Result<()> {
    let mut out = String::from("epoch,layer,train_loss,val_accuracy\n");
    for e in &report.epochs {
        for (layer, stats) in e.per_layer.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch,
                layer + 1,
                stats.train_loss,
                stats.val_accuracy
            ));
        }
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}
