//! End-to-end experiment driver: data generation, the two training phases,
//! threshold tuning, evaluation on clean and shifted test sets, and the
//! bound check. The CLI phases are thin wrappers over these functions.

use crate::bounds::{verify_model_bound, VerificationReport};
use crate::data::{gen_mixture, shift, Dataset, MixtureSpec, SplitTag};
use crate::error::{Error, Result};
use crate::gate::{baseline_sr, evaluate, GoldOracle, SelectiveMetrics, Thresholds};
use crate::hardness::{label_hard, profile, HardnessLabeledSet};
use crate::manifest::ExperimentConfig;
use crate::model::{ModelConfig, MultiExitModel};
use crate::seeding::{derive_seed, phase_rng};
use crate::train_dc::{train_dcs, DcReport, DcTrainConfig};
use crate::train_ec::{train_ecs, TrainConfig, TrainReport};
use crate::tune::{grid_search, risk_coverage_curve, CurvePoint, GridCell};

/// The four splits of one run.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub test_shift: Dataset,
}

/// Generates train/val/test splits plus the shifted copy of the test split,
/// each from its own derived seed.
pub fn generate_datasets(config: &ExperimentConfig) -> Result<ExperimentData> {
    let spec = |samples: usize, tag: &str| MixtureSpec {
        dims: config.data.dims,
        classes: config.data.classes,
        samples,
        overlap: config.data.overlap,
        fake_fraction: config.data.fake_fraction,
        fake_signature: config.data.fake_signature,
        seed: derive_seed(config.seed, tag),
    };
    let train = gen_mixture(&spec(config.data.train_samples, "data-train"))?
        .with_split(SplitTag::Train);
    let val = gen_mixture(&spec(config.data.val_samples, "data-val"))?.with_split(SplitTag::Val);
    let test =
        gen_mixture(&spec(config.data.test_samples, "data-test"))?.with_split(SplitTag::Test);
    let test_shift = shift(
        &test,
        config.data.shift.kind,
        config.data.shift.magnitude,
        derive_seed(config.seed, "data-shift"),
    )?;
    Ok(ExperimentData {
        train,
        val,
        test,
        test_shift,
    })
}

/// Builds the untrained model from the config with a derived init seed.
pub fn init_model(config: &ExperimentConfig) -> Result<MultiExitModel> {
    let model_config = ModelConfig {
        input_dim: config.data.dims,
        classes: config.data.classes,
        hidden_widths: config.model.hidden_widths.clone(),
        activation: config.model.activation,
        shared_dc: config.model.shared_dc,
    };
    let mut rng = phase_rng(config.seed, "model-init");
    MultiExitModel::new(&model_config, &mut rng)
}

pub fn ec_train_config(config: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        epochs: config.ec.epochs,
        batch_size: config.ec.batch_size,
        learning_rate: config.ec.learning_rate,
        seed: derive_seed(config.seed, "ec-train"),
        patience: config.ec.patience,
        validation_fraction: config.ec.validation_fraction,
        freeze_backbone: config.ec.freeze_backbone,
    }
}

pub fn dc_train_config(config: &ExperimentConfig) -> DcTrainConfig {
    DcTrainConfig {
        epochs: config.dc.epochs,
        batch_size: config.dc.batch_size,
        learning_rate: config.dc.learning_rate,
        seed: derive_seed(config.seed, "dc-train"),
        holdout_fraction: config.dc.holdout_fraction,
    }
}

/// Builds the deferral training set from the trained model and the training
/// split, using the configured K.
pub fn build_dc_data(
    model: &MultiExitModel,
    train: &Dataset,
    k_percent: f64,
) -> Result<HardnessLabeledSet> {
    let profiles = profile(model, train)?;
    label_hard(&profiles, train, k_percent)
}

/// Plain error rate of the final layer's exit head over the whole dataset —
/// the full-coverage reference point.
pub fn full_coverage_error(model: &MultiExitModel, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut wrong = 0usize;
    for i in 0..dataset.len() {
        let pass = model.forward_all(dataset.feature_row(i))?;
        let last = pass.readouts.last().expect("model has layers");
        if last.predicted_class() != dataset.label(i) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / dataset.len() as f64)
}

/// Softmax-response baseline evaluated at the alpha whose coverage comes
/// closest to `target_coverage`. Candidate alphas are the distinct final-layer
/// confidences, so every achievable coverage is reachable. Returns `None`
/// when no candidate lands within `tolerance`.
pub fn baseline_at_matched_coverage(
    model: &MultiExitModel,
    dataset: &Dataset,
    target_coverage: f64,
    tolerance: f64,
) -> Result<Option<SelectiveMetrics>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut confidences = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let pass = model.forward_all(dataset.feature_row(i))?;
        confidences.push(pass.readouts.last().expect("model has layers").confidence);
    }
    confidences.sort_by(|a, b| b.total_cmp(a));
    let m = confidences.len() as f64;

    // Coverage of alpha = c for each distinct confidence c, plus an alpha
    // above the maximum for zero coverage.
    let mut best: Option<(f64, f64)> = None; // (|gap|, alpha)
    let mut consider = |coverage: f64, alpha: f64| {
        let gap = (coverage - target_coverage).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, alpha));
        }
    };
    consider(0.0, f64::INFINITY);
    let mut idx = 0;
    while idx < confidences.len() {
        let c = confidences[idx];
        let mut last = idx;
        while last + 1 < confidences.len() && confidences[last + 1] == c {
            last += 1;
        }
        consider((last + 1) as f64 / m, c);
        idx = last + 1;
    }

    match best {
        Some((gap, alpha)) if gap <= tolerance => Ok(Some(baseline_sr(model, dataset, alpha)?)),
        _ => Ok(None),
    }
}

/// Everything produced by one full run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub model: MultiExitModel,
    pub train_report: TrainReport,
    pub dc_report: DcReport,
    pub tuned: Thresholds,
    pub grid: Vec<GridCell>,
    pub test_metrics: SelectiveMetrics,
    pub shift_metrics: SelectiveMetrics,
    pub test_curve: Vec<CurvePoint>,
    pub shift_curve: Vec<CurvePoint>,
    pub full_coverage_error: f64,
    pub bound_report: VerificationReport,
}

/// Dense beta sweep used for exported risk-coverage curves.
pub fn curve_betas() -> Vec<f64> {
    (1..50).map(|i| i as f64 / 50.0).collect()
}

/// Runs the full pipeline in memory: generate data, train exit heads, build
/// deferral labels, train deferral heads, tune thresholds on the validation
/// split, evaluate on clean and shifted test splits, and check the bound.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let data = generate_datasets(config)?;
    let mut model = init_model(config)?;
    let train_report = train_ecs(&mut model, &data.train, &ec_train_config(config))?;

    let labeled = build_dc_data(&model, &data.train, config.dc.k_percent)?;
    let dc_report = train_dcs(&mut model, &labeled, &dc_train_config(config))?;

    let val_oracle = GoldOracle::for_dataset(&data.val);
    let search = grid_search(
        &model,
        &data.val,
        &config.tuning.alphas,
        &config.tuning.betas,
        &val_oracle,
    )?;

    let test_oracle = GoldOracle::for_dataset(&data.test);
    let test_metrics = evaluate(&model, &data.test, search.best, &test_oracle)?;
    let shift_oracle = GoldOracle::for_dataset(&data.test_shift);
    let shift_metrics = evaluate(&model, &data.test_shift, search.best, &shift_oracle)?;

    let betas = curve_betas();
    let test_curve = risk_coverage_curve(&model, &data.test, search.best.alpha, &betas, &test_oracle)?;
    let shift_curve = risk_coverage_curve(
        &model,
        &data.test_shift,
        search.best.alpha,
        &betas,
        &shift_oracle,
    )?;

    let full_coverage_error = full_coverage_error(&model, &data.test)?;
    let bound_report =
        verify_model_bound(&test_metrics, &dc_report.holdout_errors(), config.gamma)?;

    Ok(ExperimentOutcome {
        model,
        train_report,
        dc_report,
        tuned: search.best,
        grid: search.cells,
        test_metrics,
        shift_metrics,
        test_curve,
        shift_curve,
        full_coverage_error,
        bound_report,
    })
}
