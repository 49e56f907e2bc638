//! Phase 3: training the deferral heads on hard/easy labels with the backbone
//! and exit heads frozen.

use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::backprop::{accumulate_dc_grads, depth_weights, ModelGrads};
use crate::data::shuffle;
use crate::error::{Error, Result};
use crate::hardness::HardnessLabeledSet;
use crate::model::{MultiExitModel, ParamSet};
use crate::seeding::phase_rng;
use crate::train_ec::WeightedLoss;

const SCORE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of the labeled set held out to measure per-layer deferral
    /// error rates.
    #[serde(default = "default_holdout_fraction")]
    pub holdout_fraction: f64,
}

fn default_holdout_fraction() -> f64 {
    0.2
}

impl DcTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be > 0".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "holdout_fraction must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Depth-weighted binary cross-entropy over per-layer hardness scores.
/// Scores exactly 0 or 1 are clamped to keep the logarithms finite.
pub fn dc_loss(hardness_scores: &[f64], hard: bool) -> Result<WeightedLoss> {
    if hardness_scores.is_empty() {
        return Err(Error::InvalidArgument("no hardness scores".into()));
    }
    let z = if hard { 1.0 } else { 0.0 };
    let mut per_layer = Vec::with_capacity(hardness_scores.len());
    let mut clamped = 0;
    for &s in hardness_scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(format!(
                "hardness score {s} outside [0, 1]"
            )));
        }
        let s = if s < SCORE_FLOOR {
            clamped += 1;
            SCORE_FLOOR
        } else if s > 1.0 - SCORE_FLOOR {
            clamped += 1;
            1.0 - SCORE_FLOOR
        } else {
            s
        };
        per_layer.push(-(z * s.ln() + (1.0 - z) * (1.0 - s).ln()));
    }
    let weights = depth_weights(hardness_scores.len());
    let aggregate = per_layer.iter().zip(&weights).map(|(l, w)| l * w).sum();
    Ok(WeightedLoss {
        aggregate,
        per_layer,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcLayerReport {
    /// 1-based layer.
    pub layer: usize,
    /// Hard/easy misclassification rate on the holdout slice at threshold 0.5.
    pub holdout_error: f64,
    /// Mean binary cross-entropy on the holdout slice.
    pub holdout_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcReport {
    pub per_layer: Vec<DcLayerReport>,
    pub holdout_size: usize,
    pub clamp_warnings: usize,
}

impl DcReport {
    pub fn holdout_errors(&self) -> Vec<f64> {
        self.per_layer.iter().map(|l| l.holdout_error).collect()
    }
}

/// Trains the deferral heads on the labeled set; backbone and exit-head
/// parameters are frozen by construction (only deferral tensors are ever
/// registered with the optimizer). Returns per-layer deferral error rates
/// measured on a held-out slice at hardness threshold 0.5.
pub fn train_dcs(
    model: &mut MultiExitModel,
    labeled: &HardnessLabeledSet,
    config: &DcTrainConfig,
) -> Result<DcReport> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("empty labeled set".into()));
    }
    let hard_total = labeled.examples.iter().filter(|e| e.hard).count();
    if hard_total == 0 || hard_total == labeled.len() {
        return Err(Error::Training {
            layer: 0,
            reason: "labeled set is degenerate: a single class".into(),
        });
    }

    let m = labeled.len();
    let mut indices: Vec<usize> = (0..m).collect();
    let mut rng = phase_rng(config.seed, "dc-split");
    shuffle(&mut indices, &mut rng);
    let holdout_count = ((m as f64 * config.holdout_fraction).round() as usize).clamp(1, m - 1);
    let (train_idx, holdout_idx) = indices.split_at(m - holdout_count);
    let train_idx = train_idx.to_vec();
    let holdout_idx = holdout_idx.to_vec();

    let mut adam = Adam::new(
        config.learning_rate,
        &model.tensor_sizes(ParamSet::Deferral, false),
    )?;
    let mut grads = ModelGrads::zeros_like(model);
    let n = model.layer_count();
    let mut clamp_warnings = 0;

    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        let mut epoch_rng = phase_rng(config.seed, &format!("dc-epoch{epoch}"));
        shuffle(&mut order, &mut epoch_rng);
        for batch in order.chunks(config.batch_size) {
            grads.zero();
            for &i in batch {
                let example = &labeled.examples[i];
                let pass = model
                    .forward_all(&example.features)
                    .map_err(crate::train_ec::diverged)?;
                let scores: Vec<f64> = pass.readouts.iter().map(|r| r.hardness).collect();
                clamp_warnings += dc_loss(&scores, example.hard)?.clamped;
                accumulate_dc_grads(model, &pass, example.hard, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(layer) = grads.non_finite_layer() {
                return Err(Error::Training {
                    layer,
                    reason: "non-finite gradient".into(),
                });
            }
            adam.step(
                &mut model.param_slices_mut(ParamSet::Deferral, false),
                &grads.slices(ParamSet::Deferral, false),
            )?;
        }
    }

    // Holdout measurement: per-layer misclassification at threshold 0.5,
    // plus mean per-layer BCE.
    let mut mistakes = vec![0usize; n];
    let mut losses = vec![0.0; n];
    for &i in &holdout_idx {
        let example = &labeled.examples[i];
        let pass = model.forward_all(&example.features)?;
        let scores: Vec<f64> = pass.readouts.iter().map(|r| r.hardness).collect();
        let loss = dc_loss(&scores, example.hard)?;
        for (layer, (&s, l)) in scores.iter().zip(&loss.per_layer).enumerate() {
            let predicted_hard = s >= 0.5;
            if predicted_hard != example.hard {
                mistakes[layer] += 1;
            }
            losses[layer] += l;
        }
    }
    let holdout = holdout_idx.len();
    Ok(DcReport {
        per_layer: (0..n)
            .map(|layer| DcLayerReport {
                layer: layer + 1,
                holdout_error: mistakes[layer] as f64 / holdout as f64,
                holdout_loss: losses[layer] / holdout as f64,
            })
            .collect(),
        holdout_size: holdout,
        clamp_warnings,
    })
}

/// Writes the deferral report: `layer,q_d_holdout,loss`.
pub fn write_dc_report(report: &DcReport, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut out = String::from("layer,q_d_holdout,loss\n");
    for l in &report.per_layer {
        out.push_str(&format!("{},{},{}\n", l.layer, l.holdout_error, l.holdout_loss));
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::hardness::HardnessExample;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_layer_bce_at_half_is_ln_two() {
        let loss = dc_loss(&[0.5], true).unwrap();
        assert!((loss.aggregate - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_scores_drive_the_loss_to_zero() {
        let loss = dc_loss(&[1.0 - 1e-13, 1.0 - 1e-13], true).unwrap();
        assert!(loss.aggregate < 1e-10);
    }

    #[test]
    fn two_layer_weighted_aggregate_matches_direct_formula() {
        // L_1 = 0.6 and L_2 = 0.3 give (0.6 + 2*0.3) / 3 = 0.4.
        let s1 = (-0.6_f64).exp();
        let s2 = (-0.3_f64).exp();
        let loss = dc_loss(&[s1, s2], true).unwrap();
        assert!((loss.per_layer[0] - 0.6).abs() < 1e-12);
        assert!((loss.per_layer[1] - 0.3).abs() < 1e-12);
        assert!((loss.aggregate - 0.4).abs() < 1e-12);
    }

    #[test]
    fn extreme_scores_are_clamped() {
        let loss = dc_loss(&[0.0, 1.0], true).unwrap();
        assert_eq!(loss.clamped, 2);
        assert!(loss.aggregate.is_finite());
    }

    fn model_with_widths(seed: u64, shared: bool) -> MultiExitModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultiExitModel::new(
            &ModelConfig {
                input_dim: 2,
                classes: 2,
                hidden_widths: vec![6, 6, 6],
                activation: Activation::Tanh,
                shared_dc: shared,
            },
            &mut rng,
        )
        .unwrap()
    }

    /// Hard points sit far along the second feature axis, easy points near the
    /// origin, so a linear probe on any hidden state separates them.
    fn separable_labeled_set(m: usize) -> HardnessLabeledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut examples = Vec::new();
        for i in 0..m {
            let hard = i % 3 == 0;
            let base = if hard { 2.5 } else { -0.5 };
            let x = vec![
                rng.random_range(-0.5..0.5),
                base + rng.random_range(-0.3..0.3),
            ];
            examples.push(HardnessExample {
                sample_id: i,
                features: x,
                hard,
            });
        }
        let hard_count = examples.iter().filter(|e| e.hard).count();
        HardnessLabeledSet {
            examples,
            k_percent: 33.0,
            hard_count,
        }
    }

    fn quick_config(seed: u64) -> DcTrainConfig {
        DcTrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 0.05,
            seed,
            holdout_fraction: 0.2,
        }
    }

    #[test]
    fn backbone_and_exit_heads_are_bitwise_frozen() {
        let mut model = model_with_widths(41, false);
        let labeled = separable_labeled_set(120);
        let before = model.flat_params(ParamSet::Predictor);
        train_dcs(&mut model, &labeled, &quick_config(1)).unwrap();
        assert_eq!(model.flat_params(ParamSet::Predictor), before);
    }

    #[test]
    fn separable_fixture_reaches_low_deferral_error() {
        let mut model = model_with_widths(42, false);
        let labeled = separable_labeled_set(240);
        let report = train_dcs(&mut model, &labeled, &quick_config(2)).unwrap();
        for l in &report.per_layer {
            assert!(
                l.holdout_error < 0.3,
                "layer {} error {}",
                l.layer,
                l.holdout_error
            );
        }
    }

    #[test]
    fn shared_heads_stay_bitwise_identical() {
        let mut model = model_with_widths(43, true);
        let labeled = separable_labeled_set(120);
        train_dcs(&mut model, &labeled, &quick_config(3)).unwrap();
        // A shared model stores a single head, so identity holds by
        // construction; verify the readout path agrees with that head.
        let pass = model.forward_all(&[0.1, 2.4]).unwrap();
        for (i, r) in pass.readouts.iter().enumerate() {
            let logit = model.deferral_head(0).forward(&pass.hidden[i + 1]).unwrap()[0];
            assert_eq!(r.hardness, crate::activation::sigmoid(logit));
        }
    }

    #[test]
    fn single_class_labeled_set_is_a_training_error() {
        let mut model = model_with_widths(44, false);
        let mut labeled = separable_labeled_set(60);
        for e in &mut labeled.examples {
            e.hard = false;
        }
        assert!(matches!(
            train_dcs(&mut model, &labeled, &quick_config(4)),
            Err(Error::Training { .. })
        ));
    }

    #[test]
    fn holdout_error_matches_an_independent_recount() {
        let mut model = model_with_widths(45, false);
        let labeled = separable_labeled_set(150);
        let config = quick_config(5);
        let report = train_dcs(&mut model, &labeled, &config).unwrap();

        // Recount: rebuild the same holdout split and re-score every example.
        let m = labeled.len();
        let mut indices: Vec<usize> = (0..m).collect();
        let mut rng = phase_rng(config.seed, "dc-split");
        shuffle(&mut indices, &mut rng);
        let holdout_count =
            ((m as f64 * config.holdout_fraction).round() as usize).clamp(1, m - 1);
        let holdout = &indices[m - holdout_count..];
        for (layer, layer_report) in report.per_layer.iter().enumerate() {
            let mut mistakes = 0;
            for &i in holdout {
                let e = &labeled.examples[i];
                let pass = model.forward_all(&e.features).unwrap();
                if (pass.readouts[layer].hardness >= 0.5) != e.hard {
                    mistakes += 1;
                }
            }
            let recount = mistakes as f64 / holdout.len() as f64;
            assert_eq!(layer_report.holdout_error, recount);
        }
    }
}
