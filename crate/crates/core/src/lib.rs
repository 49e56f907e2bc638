//! Gated early-exit inference with per-layer deferral to an expert.
//!
//! A multi-exit classifier carries two heads at every backbone layer: an exit
//! head producing class probabilities and a deferral head producing a hardness
//! score. At inference time each layer either exits with a prediction (high
//! confidence), defers the sample to an expert (high hardness), or passes it
//! one layer deeper. The crate covers the full workflow:
//!
//! - a small dense-network substrate with analytic gradients and an
//!   adaptive-moment optimizer ([`matrix`], [`layer`], [`adam`], [`backprop`]);
//! - the multi-exit model and its checkpoint format ([`model`]);
//! - phase-1 training of backbone plus exit heads under a depth-weighted
//!   cross-entropy objective ([`train_ec`]);
//! - construction of hard/easy labels from per-layer true-class confidence
//!   ([`hardness`]) and phase-3 training of the deferral heads ([`train_dc`]);
//! - the gated infer/defer/continue protocol and selective metrics: risk,
//!   coverage, speedup ([`gate`]);
//! - threshold grid search and risk-coverage frontiers ([`tune`]);
//! - closed-form deferral-error bounds and their Monte Carlo verification
//!   ([`bounds`]);
//! - synthetic data, covariate shifts, CSV interchange ([`data`]), run
//!   manifests ([`manifest`]), and the end-to-end experiment driver
//!   ([`experiment`]) behind the `exitgate` CLI ([`cli`]).

pub mod activation;
pub mod adam;
pub mod backprop;
pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gate;
pub mod hardness;
pub mod layer;
pub mod manifest;
pub mod matrix;
pub mod model;
pub mod seeding;
pub mod train_dc;
pub mod train_ec;
pub mod tune;

pub use activation::{sigmoid, softmax, Activation};
pub use adam::Adam;
pub use backprop::{accumulate_dc_grads, accumulate_ec_grads, depth_weights, ModelGrads};
pub use bounds::{
    lemma_bound, simulate_pipeline, theorem_bound, verify_model_bound, BoundSpec,
    SimulationReport, VerificationReport,
};
pub use data::{gen_mixture, load_csv, save_csv, shift, Dataset, MixtureSpec, ShiftKind, SplitTag};
pub use error::{Error, Result};
pub use gate::{
    baseline_sr, evaluate, gate_step, infer, metrics_from_outcomes, walk_readouts, ExpertOracle,
    GateDecision, GoldOracle, InferenceTrace, NoisyOracle, SampleOutcome, SelectiveMetrics,
    Thresholds,
};
pub use hardness::{label_hard, profile, ConfidenceProfile, HardnessLabeledSet};
pub use layer::DenseLayer;
pub use matrix::Matrix;
pub use model::{ForwardPass, LayerReadout, ModelConfig, MultiExitModel, ParamSet};
pub use train_dc::{dc_loss, train_dcs, DcReport, DcTrainConfig};
pub use train_ec::{ec_loss, train_ecs, TrainConfig, TrainReport};
pub use tune::{grid_search, risk_coverage_curve, CurvePoint, GridCell, GridSearchResult};
