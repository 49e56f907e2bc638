//! The gated infer/defer/continue protocol and its selective metrics.
//!
//! At every non-final layer the deferral head is consulted first: a hardness
//! score at or above `beta` sends the sample to the expert immediately.
//! Otherwise the exit head may claim the sample when its confidence reaches
//! `alpha`, or pass it one layer deeper. The final layer decides on confidence
//! alone: exit when confident, defer otherwise, whatever the deferral head says.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LayerReadout, MultiExitModel};
use crate::seeding::derive_seed;

/// Exit-confidence threshold `alpha` and deferral-hardness threshold `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub alpha: f64,
    pub beta: f64,
}

impl Thresholds {
    /// Both thresholds must lie strictly inside (0, 1). Tests may build the
    /// struct directly to probe degenerate settings.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be strictly in (0, 1), got {v}"
                )));
            }
        }
        Ok(Thresholds { alpha, beta })
    }
}

/// One layer's verdict on a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    /// Exit with the predicted class.
    Exit(usize),
    /// Hand the sample to the expert.
    Defer,
    /// Pass the sample to the next layer.
    Continue,
}

/// The three-way rule at one layer. Non-final layers check hardness first,
/// then confidence; the final layer checks confidence only.
pub fn gate_step(readout: &LayerReadout, thresholds: Thresholds, is_final: bool) -> GateDecision {
    if is_final {
        return if readout.confidence >= thresholds.alpha {
            GateDecision::Exit(readout.predicted_class())
        } else {
            GateDecision::Defer
        };
    }
    if readout.hardness >= thresholds.beta {
        GateDecision::Defer
    } else if readout.confidence >= thresholds.alpha {
        GateDecision::Exit(readout.predicted_class())
    } else {
        GateDecision::Continue
    }
}

/// Scores observed at a visited layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerVisit {
    pub layer: usize,
    pub confidence: f64,
    pub hardness: f64,
}

/// Record of one sample's walk through the gates.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrace {
    /// Layers visited in order; the last entry is the terminal layer.
    pub visits: Vec<LayerVisit>,
    /// 1-based layer at which the walk terminated.
    pub terminal_layer: usize,
    /// True when the model itself predicted (an exit), false when deferred.
    pub covered: bool,
    /// The exit head's class when covered.
    pub predicted: Option<usize>,
}

/// Walks the per-layer readouts through the gate rule until the sample
/// terminates. Every walk terminates exactly once, at the latest on the
/// final layer.
pub fn walk_readouts(readouts: &[LayerReadout], thresholds: Thresholds) -> InferenceTrace {
    assert!(!readouts.is_empty(), "walk over empty readouts");
    let n = readouts.len();
    let mut visits = Vec::new();
    for (i, readout) in readouts.iter().enumerate() {
        visits.push(LayerVisit {
            layer: i + 1,
            confidence: readout.confidence,
            hardness: readout.hardness,
        });
        match gate_step(readout, thresholds, i + 1 == n) {
            GateDecision::Exit(class) => {
                return InferenceTrace {
                    visits,
                    terminal_layer: i + 1,
                    covered: true,
                    predicted: Some(class),
                }
            }
            GateDecision::Defer => {
                return InferenceTrace {
                    visits,
                    terminal_layer: i + 1,
                    covered: false,
                    predicted: None,
                }
            }
            GateDecision::Continue => {}
        }
    }
    unreachable!("final layer always exits or defers");
}

/// Resolves deferred samples. The default expert simply returns the gold label.
pub trait ExpertOracle {
    fn resolve(&self, sample_id: usize) -> Result<usize>;
}

/// Gold-label lookup: the expert assigns the true label.
pub struct GoldOracle<'a> {
    labels: &'a [usize],
}

impl<'a> GoldOracle<'a> {
    pub fn new(labels: &'a [usize]) -> Self {
        GoldOracle { labels }
    }

    pub fn for_dataset(dataset: &'a Dataset) -> Self {
        GoldOracle {
            labels: dataset.labels(),
        }
    }
}

impl ExpertOracle for GoldOracle<'_> {
    fn resolve(&self, sample_id: usize) -> Result<usize> {
        self.labels
            .get(sample_id)
            .copied()
            .ok_or(Error::OracleUnavailable(sample_id))
    }
}

/// An expert that answers with a wrong label at a fixed rate, for
/// sensitivity studies. Deterministic per (seed, sample id).
pub struct NoisyOracle<'a> {
    labels: &'a [usize],
    classes: usize,
    flip_probability: f64,
    seed: u64,
}

impl<'a> NoisyOracle<'a> {
    pub fn new(labels: &'a [usize], classes: usize, flip_probability: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip_probability) {
            return Err(Error::InvalidArgument(
                "flip probability must be in [0, 1]".into(),
            ));
        }
        if classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        Ok(NoisyOracle {
            labels,
            classes,
            flip_probability,
            seed,
        })
    }
}

impl ExpertOracle for NoisyOracle<'_> {
    fn resolve(&self, sample_id: usize) -> Result<usize> {
        let gold = self
            .labels
            .get(sample_id)
            .copied()
            .ok_or(Error::OracleUnavailable(sample_id))?;
        let h = derive_seed(self.seed, &format!("expert{sample_id}"));
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        if u < self.flip_probability {
            let offset = 1 + (h as usize % (self.classes - 1));
            Ok((gold + offset) % self.classes)
        } else {
            Ok(gold)
        }
    }
}

/// Runs one sample through the gated protocol. Covered samples carry the exit
/// head's label; deferred samples carry the expert's.
pub fn infer(
    model: &MultiExitModel,
    x: &[f64],
    thresholds: Thresholds,
    oracle: &dyn ExpertOracle,
    sample_id: usize,
) -> Result<(usize, InferenceTrace)> {
    let pass = model.forward_all(x)?;
    let trace = walk_readouts(&pass.readouts, thresholds);
    let label = match trace.predicted {
        Some(class) => class,
        None => oracle.resolve(sample_id)?,
    };
    Ok((label, trace))
}

/// How one sample ended: where it terminated, whether the model covered it,
/// and whether a covered prediction was correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOutcome {
    /// 1-based termination layer (exit or deferral).
    pub terminal_layer: usize,
    pub covered: bool,
    /// Only meaningful when covered.
    pub correct: bool,
}

/// Per-layer termination tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayerTally {
    /// Samples terminating here, exits and deferrals combined.
    pub terminated: u64,
    pub covered: u64,
    pub miscovered: u64,
}

/// Empirical selective-prediction metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectiveMetrics {
    pub total: u64,
    pub covered: u64,
    pub miscovered: u64,
    pub deferrals: u64,
    /// Fraction of samples the model predicted itself.
    pub coverage: f64,
    /// Error rate among covered samples; 0 when nothing is covered, with
    /// `risk_defined` cleared.
    pub risk: f64,
    pub risk_defined: bool,
    /// `(Σ n·x_i) / (Σ i·x_i)` over per-layer termination counts.
    pub speedup: f64,
    pub per_layer: Vec<LayerTally>,
}

impl SelectiveMetrics {
    /// Termination counts per layer (exits and deferrals combined).
    pub fn exit_histogram(&self) -> Vec<u64> {
        self.per_layer.iter().map(|t| t.terminated).collect()
    }

    /// Per-layer selective risk among that layer's covered samples.
    pub fn layer_risks(&self) -> Vec<Option<f64>> {
        self.per_layer
            .iter()
            .map(|t| {
                if t.covered > 0 {
                    Some(t.miscovered as f64 / t.covered as f64)
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Reduces per-sample outcomes to metrics. Counts are integers so this
/// reduction is order-independent.
pub fn metrics_from_outcomes(outcomes: &[SampleOutcome], layers: usize) -> Result<SelectiveMetrics> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let mut per_layer = vec![LayerTally::default(); layers];
    for o in outcomes {
        if o.terminal_layer == 0 || o.terminal_layer > layers {
            return Err(Error::InvalidArgument(format!(
                "terminal layer {} outside 1..={layers}",
                o.terminal_layer
            )));
        }
        let tally = &mut per_layer[o.terminal_layer - 1];
        tally.terminated += 1;
        if o.covered {
            tally.covered += 1;
            if !o.correct {
                tally.miscovered += 1;
            }
        }
    }
    let total = outcomes.len() as u64;
    let covered: u64 = per_layer.iter().map(|t| t.covered).sum();
    let miscovered: u64 = per_layer.iter().map(|t| t.miscovered).sum();
    let weighted_depth: u64 = per_layer
        .iter()
        .enumerate()
        .map(|(i, t)| (i as u64 + 1) * t.terminated)
        .sum();
    let risk_defined = covered > 0;
    Ok(SelectiveMetrics {
        total,
        covered,
        miscovered,
        deferrals: total - covered,
        coverage: covered as f64 / total as f64,
        risk: if risk_defined {
            miscovered as f64 / covered as f64
        } else {
            0.0
        },
        risk_defined,
        speedup: (layers as u64 * total) as f64 / weighted_depth as f64,
        per_layer,
    })
}

/// Evaluates the gated protocol over a dataset.
pub fn evaluate(
    model: &MultiExitModel,
    dataset: &Dataset,
    thresholds: Thresholds,
    oracle: &dyn ExpertOracle,
) -> Result<SelectiveMetrics> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut outcomes = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let (label, trace) = infer(model, dataset.feature_row(i), thresholds, oracle, i)?;
        outcomes.push(SampleOutcome {
            terminal_layer: trace.terminal_layer,
            covered: trace.covered,
            correct: label == dataset.label(i),
        });
    }
    metrics_from_outcomes(&outcomes, model.layer_count())
}

/// Softmax-response baseline without deferral heads: every sample runs to the
/// final layer and is covered iff the final confidence clears `alpha`.
/// Speedup is exactly 1 by construction.
pub fn baseline_sr(model: &MultiExitModel, dataset: &Dataset, alpha: f64) -> Result<SelectiveMetrics> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let n = model.layer_count();
    let mut outcomes = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let pass = model.forward_all(dataset.feature_row(i))?;
        let last = &pass.readouts[n - 1];
        let covered = last.confidence >= alpha;
        outcomes.push(SampleOutcome {
            terminal_layer: n,
            covered,
            correct: covered && last.predicted_class() == dataset.label(i),
        });
    }
    metrics_from_outcomes(&outcomes, n)
}
