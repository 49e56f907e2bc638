//! Deferral-error bounds and their Monte Carlo verification.
//!
//! For an exit classifier with error rate `q`, keeping the selective risk of
//! its layer below `gamma` requires the deferral head's error rate to stay
//! below `1 / (1 + ((1/gamma) - 1) · (q / (1 - q)))`. Applying the same
//! expression to the worst layer's `q_max` bounds the whole pipeline. The
//! simulator draws the generative model behind that argument — per-layer
//! classifier correctness, deferral correctness, and gate-reach events with
//! constant reach probabilities — and checks the claim empirically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::SelectiveMetrics;
use crate::seeding::derive_seed;

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be strictly in (0, 1), got {v}"
        )));
    }
    Ok(())
}

/// The bound without argument checking, defined for `q` in [0, 1). Used when
/// `q` is a measured rate that may legitimately be 0.
fn bound_formula(q: f64, gamma: f64) -> f64 {
    1.0 / (1.0 + ((1.0 / gamma) - 1.0) * (q / (1.0 - q)))
}

/// Maximal admissible deferral-head error rate for one layer with exit
/// classifier error `q` and risk target `gamma`.
pub fn lemma_bound(q: f64, gamma: f64) -> Result<f64> {
    check_unit_open("q", q)?;
    check_unit_open("gamma", gamma)?;
    Ok(bound_formula(q, gamma))
}

/// Maximal admissible worst-layer deferral error rate: the same expression
/// evaluated at `q_max`.
pub fn theorem_bound(q_max: f64, gamma: f64) -> Result<f64> {
    check_unit_open("q_max", q_max)?;
    check_unit_open("gamma", gamma)?;
    Ok(bound_formula(q_max, gamma))
}

/// Inputs to the pipeline simulator: per-layer exit-classifier and
/// deferral-head error rates, plus the proof's constant gate-reach
/// probabilities `a` (deferral history) and `b` (confidence history).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub gamma: f64,
    pub ec_error: Vec<f64>,
    pub dc_error: Vec<f64>,
    /// Probability that a sample's hardness history keeps it in the pipeline
    /// at each layer. Defaults to 1, the conditional per-layer view.
    pub reach_deferral: Vec<f64>,
    /// Probability that the confidence history first clears at each layer.
    pub reach_confidence: Vec<f64>,
}

impl BoundSpec {
    /// Uniform rates across `layers` layers with unit reach probabilities.
    pub fn uniform(layers: usize, q: f64, q_d: f64, gamma: f64) -> Result<Self> {
        let spec = BoundSpec {
            gamma,
            ec_error: vec![q; layers],
            dc_error: vec![q_d; layers],
            reach_deferral: vec![1.0; layers],
            reach_confidence: vec![1.0; layers],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn layers(&self) -> usize {
        self.ec_error.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ec_error.is_empty() {
            return Err(Error::InvalidArgument("need at least one layer".into()));
        }
        if self.dc_error.len() != self.ec_error.len()
            || self.reach_deferral.len() != self.ec_error.len()
            || self.reach_confidence.len() != self.ec_error.len()
        {
            return Err(Error::shape(
                "bound spec layers",
                self.ec_error.len(),
                self.dc_error.len(),
            ));
        }
        check_unit_open("gamma", self.gamma)?;
        for &q in &self.ec_error {
            check_unit_open("ec_error", q)?;
        }
        for &q in &self.dc_error {
            check_unit_open("dc_error", q)?;
        }
        for &a in self.reach_deferral.iter().chain(&self.reach_confidence) {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "reach probabilities must be in (0, 1], got {a}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-layer tallies from the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayerSim {
    pub covered: u64,
    pub miscovered: u64,
}

impl LayerSim {
    pub fn risk(&self) -> Option<f64> {
        (self.covered > 0).then(|| self.miscovered as f64 / self.covered as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub trials: u64,
    pub covered: u64,
    pub miscovered: u64,
    /// Overall miscovered/covered ratio (0 when nothing was covered).
    pub risk: f64,
    /// Binomial standard error of the risk estimate.
    pub std_error: f64,
    /// Three standard errors.
    pub half_width: f64,
    pub per_layer: Vec<LayerSim>,
}

const SIM_CHUNK: u64 = 8192;

/// Monte Carlo draw of the proof's generative model. Per trial and layer:
/// a reach event with probability `a_t · b_t`, classifier correctness with
/// probability `1 - q_t`, and a deferral-head error with probability `q_t^d`.
/// The sample exits covered at that layer iff it reaches it and the deferral
/// verdict lets it through: wrong samples exit via a deferral error, correct
/// samples via a deferral success. Trials partition into fixed chunks with
/// derived seeds, so the merged counts do not depend on scheduling.
pub fn simulate_pipeline(spec: &BoundSpec, trials: u64, seed: u64) -> Result<SimulationReport> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let n = spec.layers();
    let chunks: Vec<(u64, u64)> = (0..trials.div_ceil(SIM_CHUNK))
        .map(|c| (c, SIM_CHUNK.min(trials - c * SIM_CHUNK)))
        .collect();

    let per_layer = chunks
        .par_iter()
        .map(|&(chunk, count)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("sim-chunk{chunk}")));
            let mut tallies = vec![LayerSim::default(); n];
            for _ in 0..count {
                for (t, tally) in tallies.iter_mut().enumerate() {
                    let reach = rng.random::<f64>() < spec.reach_deferral[t]
                        && rng.random::<f64>() < spec.reach_confidence[t];
                    let wrong = rng.random::<f64>() < spec.ec_error[t];
                    let dc_err = rng.random::<f64>() < spec.dc_error[t];
                    if !reach {
                        continue;
                    }
                    // Covered iff the deferral verdict passes the sample on:
                    // wrong && dc_err (missed hard sample) or right && !dc_err.
                    if wrong == dc_err {
                        tally.covered += 1;
                        if wrong {
                            tally.miscovered += 1;
                        }
                    }
                }
            }
            tallies
        })
        .reduce(
            || vec![LayerSim::default(); n],
            |mut acc, part| {
                for (a, p) in acc.iter_mut().zip(&part) {
                    a.covered += p.covered;
                    a.miscovered += p.miscovered;
                }
                acc
            },
        );

    let covered: u64 = per_layer.iter().map(|l| l.covered).sum();
    let miscovered: u64 = per_layer.iter().map(|l| l.miscovered).sum();
    let risk = if covered > 0 {
        miscovered as f64 / covered as f64
    } else {
        0.0
    };
    let std_error = if covered > 0 {
        (risk * (1.0 - risk) / covered as f64).sqrt()
    } else {
        0.0
    };
    Ok(SimulationReport {
        trials,
        covered,
        miscovered,
        risk,
        std_error,
        half_width: 3.0 * std_error,
        per_layer,
    })
}

/// Theorem check against measured rates from a real evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub gamma: f64,
    /// Worst measured exit-classifier error over layers with covered samples.
    pub q_max: Option<f64>,
    /// Worst measured deferral-head error.
    pub q_d_max: f64,
    /// `theorem_bound(q_max, gamma)` when `q_max` is available.
    pub bound: Option<f64>,
    pub bound_satisfied: Option<bool>,
    /// Measured selective risk of the evaluation.
    pub empirical_risk: f64,
    /// Three binomial standard errors of the measured risk.
    pub half_width: f64,
    pub risk_below_gamma: bool,
    /// Bound satisfied yet measured risk at or above gamma.
    pub disagreement: bool,
    /// 1-based layers with zero covered samples, excluded from `q_max`.
    pub excluded_layers: Vec<usize>,
    /// Per-layer selective risk among each layer's covered samples; the
    /// aggregate above stays the headline number.
    pub layer_risks: Vec<Option<f64>>,
}

impl std::fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "gamma={}", self.gamma)?;
        match self.q_max {
            Some(q) => writeln!(f, "q_max={q}")?,
            None => writeln!(f, "q_max=unavailable")?,
        }
        writeln!(f, "q_d_max={}", self.q_d_max)?;
        match self.bound {
            Some(b) => writeln!(f, "bound={b}")?,
            None => writeln!(f, "bound=unavailable")?,
        }
        match self.bound_satisfied {
            Some(s) => writeln!(f, "bound_satisfied={s}")?,
            None => writeln!(f, "bound_satisfied=unavailable")?,
        }
        writeln!(f, "empirical_risk={}", self.empirical_risk)?;
        writeln!(f, "half_width={}", self.half_width)?;
        writeln!(f, "risk_below_gamma={}", self.risk_below_gamma)?;
        writeln!(f, "disagreement={}", self.disagreement)?;
        let excluded: Vec<String> = self.excluded_layers.iter().map(|l| l.to_string()).collect();
        writeln!(f, "excluded_layers={}", excluded.join(";"))?;
        let risks: Vec<String> = self
            .layer_risks
            .iter()
            .map(|r| r.map_or_else(|| "na".to_string(), |v| v.to_string()))
            .collect();
        writeln!(f, "layer_risks={}", risks.join(";"))
    }
}

/// Applies the worst-layer bound to measured rates: per-layer exit errors
/// among covered samples from `metrics`, deferral errors from the training
/// holdout, and the target `gamma`. Layers with no covered samples are
/// excluded with a warning entry.
pub fn verify_model_bound(
    metrics: &SelectiveMetrics,
    dc_holdout_errors: &[f64],
    gamma: f64,
) -> Result<VerificationReport> {
    check_unit_open("gamma", gamma)?;
    if dc_holdout_errors.len() != metrics.per_layer.len() {
        return Err(Error::shape(
            "deferral error rates",
            metrics.per_layer.len(),
            dc_holdout_errors.len(),
        ));
    }
    let mut q_max: Option<f64> = None;
    let mut excluded = Vec::new();
    for (i, tally) in metrics.per_layer.iter().enumerate() {
        if tally.covered == 0 {
            excluded.push(i + 1);
            continue;
        }
        let q = tally.miscovered as f64 / tally.covered as f64;
        q_max = Some(q_max.map_or(q, |m: f64| m.max(q)));
    }
    let q_d_max = dc_holdout_errors.iter().cloned().fold(0.0, f64::max);
    // Measured q_max can legitimately be 0 (perfect layer) or 1; the formula
    // extends continuously to q = 0 with bound 1 and to q -> 1 with bound 0.
    let bound = q_max.map(|q| {
        if q >= 1.0 {
            0.0
        } else {
            bound_formula(q, gamma)
        }
    });
    let bound_satisfied = bound.map(|b| q_d_max < b);
    let risk_below_gamma = metrics.risk_defined && metrics.risk < gamma;
    let std_error = if metrics.covered > 0 {
        (metrics.risk * (1.0 - metrics.risk) / metrics.covered as f64).sqrt()
    } else {
        0.0
    };
    Ok(VerificationReport {
        gamma,
        q_max,
        q_d_max,
        bound,
        bound_satisfied,
        empirical_risk: metrics.risk,
        half_width: 3.0 * std_error,
        risk_below_gamma,
        disagreement: bound_satisfied == Some(true) && !risk_below_gamma,
        excluded_layers: excluded,
        layer_risks: metrics.layer_risks(),
    })
}
