//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `--nocapture` to see them).

mod common;

use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use exitgate::experiment::{
    baseline_at_matched_coverage, generate_datasets, run_experiment, ExperimentOutcome,
};
use exitgate::gate::{
    gate_step, infer, metrics_from_outcomes, walk_readouts, GateDecision, GoldOracle,
    SampleOutcome, Thresholds,
};
use exitgate::hardness::{label_hard, ConfidenceProfile};
use exitgate::manifest::{ExperimentConfig, DEFAULT_K_PERCENT};
use exitgate::model::{LayerReadout, ModelConfig, MultiExitModel, ParamSet};
use exitgate::train_dc::dc_loss;
use exitgate::train_ec::ec_loss;
use exitgate::{
    accumulate_dc_grads, accumulate_ec_grads, lemma_bound, simulate_pipeline, theorem_bound,
    Activation, BoundSpec, Dataset, Matrix, ModelGrads,
};

fn toy_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json")
}

fn toy_config(seed: u64) -> ExperimentConfig {
    let mut config = ExperimentConfig::load(&toy_config_path()).expect("bundled toy config");
    config.seed = seed;
    config
}

/// The five-seed toy experiment, shared between criteria 7 and 8.
static TOY_RUNS: LazyLock<Vec<(u64, ExperimentOutcome)>> = LazyLock::new(|| {
    (0..5)
        .map(|seed| (seed, run_experiment(&toy_config(seed)).expect("toy run")))
        .collect()
});

#[test]
fn criterion_1_bound_formula_fidelity() {
    let start = Instant::now();
    let lemma = lemma_bound(0.2, 0.1).unwrap();
    let theorem = theorem_bound(0.3, 0.1).unwrap();
    let elapsed = start.elapsed();

    assert!(
        (0.3076..=0.3078).contains(&lemma),
        "lemma_bound(0.2, 0.1) = {lemma}"
    );
    assert!(
        (0.2058..=0.2060).contains(&theorem),
        "theorem_bound(0.3, 0.1) = {theorem}"
    );
    assert!(
        elapsed.as_secs_f64() < 1e-3,
        "bound evaluation took {elapsed:?}"
    );
    println!(
        "ACCEPTANCE 1 PASS: lemma_bound(0.2,0.1)={lemma:.6}, theorem_bound(0.3,0.1)={theorem:.6}, {elapsed:?}"
    );
}

#[test]
fn criterion_2_theorem_monte_carlo() {
    let start = Instant::now();
    let trials = 100_000;
    let mut checked = 0;
    for q in [0.1, 0.2, 0.3, 0.4] {
        for gamma in [0.05, 0.1, 0.2] {
            let q_d = 0.9 * lemma_bound(q, gamma).unwrap();
            let spec = BoundSpec::uniform(4, q, q_d, gamma).unwrap();
            let report = simulate_pipeline(&spec, trials, 42).unwrap();
            assert!(
                report.risk < gamma + 3.0 * report.std_error,
                "q={q} gamma={gamma}: risk {} vs gamma {gamma} (se {})",
                report.risk,
                report.std_error
            );
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "simulation took {elapsed:?}");
    println!(
        "ACCEPTANCE 2 PASS: {checked} (q, gamma) grid points, {trials} trials each, risk < gamma + 3 SE, {elapsed:?}"
    );
}

fn random_small_model(rng: &mut ChaCha8Rng, shared_dc: bool) -> (MultiExitModel, Vec<f64>, usize) {
    let input_dim = rng.random_range(2..=4);
    let classes = rng.random_range(2..=3);
    let layers = rng.random_range(2..=3);
    let width = rng.random_range(3..=5);
    let config = ModelConfig {
        input_dim,
        classes,
        hidden_widths: vec![width; layers],
        activation: Activation::Tanh,
        shared_dc,
    };
    let mut model = MultiExitModel::new(&config, rng).unwrap();
    for set in [ParamSet::Predictor, ParamSet::Deferral] {
        let params: Vec<f64> = (0..model.param_count(set))
            .map(|_| rng.random_range(-0.8..0.8))
            .collect();
        model.set_flat_params(set, &params).unwrap();
    }
    let x: Vec<f64> = (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let label = rng.random_range(0..classes);
    (model, x, label)
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_3_gradients_match_finite_differences() {
    let step = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let shared_dc = trial % 3 == 2;
        let (mut model, x, label) = random_small_model(&mut rng, shared_dc);
        let hard = trial % 2 == 0;

        // Analytic gradients of both depth-weighted objectives.
        let pass = model.forward_all(&x).unwrap();
        let mut grads = ModelGrads::zeros_like(&model);
        accumulate_ec_grads(&model, &pass, label, false, &mut grads).unwrap();
        accumulate_dc_grads(&model, &pass, hard, &mut grads).unwrap();
        let analytic_ec = grads.flat(ParamSet::Predictor);
        let analytic_dc = grads.flat(ParamSet::Deferral);

        // Central finite differences over every parameter.
        let mut numeric_ec = Vec::with_capacity(analytic_ec.len());
        let base = model.flat_params(ParamSet::Predictor);
        for i in 0..base.len() {
            let mut probe = |delta: f64| {
                let mut params = base.clone();
                params[i] += delta;
                model.set_flat_params(ParamSet::Predictor, &params).unwrap();
                let pass = model.forward_all(&x).unwrap();
                ec_loss(&pass.readouts, label).unwrap().aggregate
            };
            numeric_ec.push((probe(step) - probe(-step)) / (2.0 * step));
        }
        model.set_flat_params(ParamSet::Predictor, &base).unwrap();

        let mut numeric_dc = Vec::with_capacity(analytic_dc.len());
        let base_dc = model.flat_params(ParamSet::Deferral);
        for i in 0..base_dc.len() {
            let mut probe = |delta: f64| {
                let mut params = base_dc.clone();
                params[i] += delta;
                model.set_flat_params(ParamSet::Deferral, &params).unwrap();
                let pass = model.forward_all(&x).unwrap();
                let scores: Vec<f64> = pass.readouts.iter().map(|r| r.hardness).collect();
                dc_loss(&scores, hard).unwrap().aggregate
            };
            numeric_dc.push((probe(step) - probe(-step)) / (2.0 * step));
        }
        model.set_flat_params(ParamSet::Deferral, &base_dc).unwrap();

        let ec_err = max_relative_error(&analytic_ec, &numeric_ec);
        let dc_err = max_relative_error(&analytic_dc, &numeric_dc);
        assert!(ec_err < 1e-4, "trial {trial}: exit-loss gradient error {ec_err}");
        assert!(dc_err < 1e-4, "trial {trial}: deferral-loss gradient error {dc_err}");
        worst = worst.max(ec_err).max(dc_err);
    }
    println!("ACCEPTANCE 3 PASS: 10 random models, both objectives, worst relative error {worst:.2e}");
}

fn synthetic_readout(layer: usize, p0: f64, hardness: f64) -> LayerReadout {
    let probs = vec![p0, 1.0 - p0];
    let confidence = p0.max(1.0 - p0);
    LayerReadout {
        layer,
        class_probs: probs,
        confidence,
        hardness,
    }
}

#[test]
fn criterion_4_gate_equivalence_against_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    for _ in 0..10_000 {
        let n = rng.random_range(2..=6);
        let alpha: f64 = rng.random_range(0.01..0.99);
        let beta: f64 = rng.random_range(0.01..0.99);
        let readouts: Vec<LayerReadout> = (1..=n)
            .map(|layer| {
                synthetic_readout(layer, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))
            })
            .collect();
        let scores: Vec<(f64, f64, usize)> = readouts
            .iter()
            .map(|r| (r.confidence, r.hardness, r.predicted_class()))
            .collect();

        let thresholds = Thresholds { alpha, beta };
        let trace = walk_readouts(&readouts, thresholds);
        let (decisions, terminal, label) = common::brute_force_walk(&scores, alpha, beta);

        assert_eq!(trace.terminal_layer, terminal);
        assert_eq!(trace.covered, label.is_some());
        assert_eq!(trace.predicted, label);
        assert_eq!(trace.visits.len(), decisions.len());
        for (i, decision) in decisions.iter().enumerate() {
            let step = gate_step(&readouts[i], thresholds, i + 1 == n);
            let expected = match decision {
                common::BruteDecision::Exit(c) => GateDecision::Exit(*c),
                common::BruteDecision::Defer => GateDecision::Defer,
                common::BruteDecision::Continue => GateDecision::Continue,
            };
            assert_eq!(step, expected, "layer {} of {n}", i + 1);
        }
    }

    // And infer() is exactly forward_all + the same walk on a live model.
    let config = toy_config(0);
    let data = generate_datasets(&config).unwrap();
    let outcome = &TOY_RUNS[0].1;
    let oracle = GoldOracle::for_dataset(&data.test);
    for i in 0..10 {
        let x = data.test.feature_row(i);
        let (_, trace) = infer(&outcome.model, x, outcome.tuned, &oracle, i).unwrap();
        let pass = outcome.model.forward_all(x).unwrap();
        assert_eq!(trace, walk_readouts(&pass.readouts, outcome.tuned));
    }
    println!("ACCEPTANCE 4 PASS: 10000 random score sequences match the brute-force three-way rule exactly");
}

#[test]
fn criterion_5_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(501);
    for _ in 0..100 {
        let layers = rng.random_range(2..=12);
        let samples = rng.random_range(1..=300);
        let outcomes: Vec<SampleOutcome> = (0..samples)
            .map(|_| {
                let covered = rng.random_range(0.0..1.0) < 0.7;
                SampleOutcome {
                    terminal_layer: rng.random_range(1..=layers),
                    covered,
                    correct: covered && rng.random_range(0.0..1.0) < 0.8,
                }
            })
            .collect();
        let metrics = metrics_from_outcomes(&outcomes, layers).unwrap();
        let raw: Vec<(usize, bool, bool)> = outcomes
            .iter()
            .map(|o| (o.terminal_layer, o.covered, o.correct))
            .collect();
        let recount = common::recount_metrics(&raw, layers);
        assert_eq!(metrics.coverage, recount.coverage);
        assert_eq!(metrics.risk, recount.risk);
        assert_eq!(metrics.speedup, recount.speedup);
        assert_eq!(metrics.exit_histogram(), recount.histogram);
        assert!(
            metrics.speedup >= 1.0 && metrics.speedup <= layers as f64,
            "speedup {} outside [1, {layers}]",
            metrics.speedup
        );
    }

    // Worked case: n = 12, 50 terminations at layer 4 and 50 at layer 12.
    let outcomes: Vec<SampleOutcome> = (0..100)
        .map(|i| SampleOutcome {
            terminal_layer: if i < 50 { 4 } else { 12 },
            covered: true,
            correct: true,
        })
        .collect();
    let metrics = metrics_from_outcomes(&outcomes, 12).unwrap();
    assert_eq!(metrics.speedup, 1.5);
    println!("ACCEPTANCE 5 PASS: 100 random traces recounted exactly; speedup in [1, n]; worked case = 1.5");
}

#[test]
fn criterion_6_hard_labeling() {
    assert_eq!(DEFAULT_K_PERCENT, 33.0);
    let toy = toy_config(0);
    assert_eq!(toy.dc.k_percent, 33.0, "bundled config keeps the default K");

    let mut rng = ChaCha8Rng::seed_from_u64(601);
    for _ in 0..200 {
        let m = rng.random_range(1..=150);
        let k: f64 = rng.random_range(1.0..99.0);
        // Means drawn from a coarse lattice so ties actually occur.
        let profiles: Vec<ConfidenceProfile> = (0..m)
            .map(|id| {
                let mean = rng.random_range(1..=9) as f64 / 10.0;
                ConfidenceProfile::from_scores(id, vec![mean, mean])
            })
            .collect();
        let features = Matrix::from_vec(m, 1, vec![0.0; m]).unwrap();
        let dataset = Dataset::new(
            features,
            vec![0; m],
            exitgate::SplitTag::Train,
            "labeling fixture",
        )
        .unwrap();
        let labeled = label_hard(&profiles, &dataset, k).unwrap();

        let expected = (k * m as f64 / 100.0).round() as usize;
        assert_eq!(labeled.hard_count, expected, "m={m} k={k}");
        assert_eq!(
            labeled.examples.iter().filter(|e| e.hard).count(),
            expected
        );

        // Every hard (mean, id) precedes every easy (mean, id) in the sort
        // order, which is the tie-aware form of "hard means are lowest".
        let key = |id: usize| (profiles[id].mean, id);
        let max_hard = labeled
            .examples
            .iter()
            .filter(|e| e.hard)
            .map(|e| key(e.sample_id))
            .max_by(|a, b| a.partial_cmp(b).unwrap());
        let min_easy = labeled
            .examples
            .iter()
            .filter(|e| !e.hard)
            .map(|e| key(e.sample_id))
            .min_by(|a, b| a.partial_cmp(b).unwrap());
        if let (Some(h), Some(e)) = (max_hard, min_easy) {
            assert!(h < e, "hard {h:?} must precede easy {e:?}");
        }
    }
    println!("ACCEPTANCE 6 PASS: 200 random profile sets labeled with exact counts and ordering; default K = 33");
}

#[test]
fn criterion_7_end_to_end_toy_experiment() {
    let mut baseline_wins = 0;
    let mut lines = Vec::new();
    for (seed, outcome) in TOY_RUNS.iter() {
        let start = Instant::now();
        let config = toy_config(*seed);
        let data = generate_datasets(&config).unwrap();

        // Selective risk strictly below the full-coverage final-layer error.
        assert!(
            outcome.test_metrics.risk < outcome.full_coverage_error,
            "seed {seed}: risk {} vs full-coverage error {}",
            outcome.test_metrics.risk,
            outcome.full_coverage_error
        );
        assert!(
            outcome.test_metrics.coverage >= 0.70,
            "seed {seed}: coverage {}",
            outcome.test_metrics.coverage
        );
        assert!(
            outcome.test_metrics.speedup >= 1.2,
            "seed {seed}: speedup {}",
            outcome.test_metrics.speedup
        );

        // Beta-sweep frontier has non-decreasing coverage.
        for pair in outcome.test_curve.windows(2) {
            assert!(
                pair[1].coverage >= pair[0].coverage,
                "seed {seed}: coverage decreased along the beta sweep"
            );
        }

        // Matched-coverage comparison against the softmax-response baseline
        // on the shifted-domain test set.
        let matched = baseline_at_matched_coverage(
            &outcome.model,
            &data.test_shift,
            outcome.shift_metrics.coverage,
            0.02,
        )
        .unwrap();
        let win = match &matched {
            Some(baseline) => outcome.shift_metrics.risk <= baseline.risk,
            None => false,
        };
        if win {
            baseline_wins += 1;
        }
        let elapsed = start.elapsed();
        assert!(
            elapsed.as_secs_f64() < 300.0,
            "seed {seed} checks took {elapsed:?}"
        );
        lines.push(format!(
            "seed {seed}: risk {:.4} (full {:.4}), coverage {:.3}, speedup {:.2}, shifted {:.4} vs baseline {}, win={win}",
            outcome.test_metrics.risk,
            outcome.full_coverage_error,
            outcome.test_metrics.coverage,
            outcome.test_metrics.speedup,
            outcome.shift_metrics.risk,
            matched
                .map(|b| format!("{:.4}@{:.3}", b.risk, b.coverage))
                .unwrap_or_else(|| "unmatched".into()),
        ));
    }
    assert!(
        baseline_wins >= 4,
        "matched-coverage baseline comparison won only {baseline_wins}/5 seeds"
    );
    println!("ACCEPTANCE 7 PASS: toy experiment over seeds 0-4 ({baseline_wins}/5 baseline wins)");
    for line in lines {
        println!("  {line}");
    }
}

#[test]
fn criterion_8_beta_ablation_direction() {
    for (seed, outcome) in TOY_RUNS.iter() {
        let config = toy_config(*seed);
        let data = generate_datasets(&config).unwrap();
        let oracle = GoldOracle::for_dataset(&data.test);
        let mut coverages = Vec::new();
        for beta in [0.55, 0.65, 0.75] {
            let metrics = exitgate::gate::evaluate(
                &outcome.model,
                &data.test,
                Thresholds { alpha: 0.85, beta },
                &oracle,
            )
            .unwrap();
            coverages.push(metrics.coverage);
        }
        assert!(
            coverages[0] <= coverages[1] && coverages[1] <= coverages[2],
            "seed {seed}: coverage not non-decreasing over beta sweep: {coverages:?}"
        );
    }
    println!("ACCEPTANCE 8 PASS: coverage non-decreasing over beta in {{0.55, 0.65, 0.75}} on every seed");
}

#[test]
fn criterion_9_manifest_replay_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("toy.json");
    let mut config = toy_config(0);
    // Keep the replay check quick; determinism must hold at any scale.
    config.data.train_samples = 600;
    config.data.val_samples = 200;
    config.data.test_samples = 300;
    config.save(&config_path).unwrap();

    let mut csv_files = Vec::new();
    for run_name in ["a", "b"] {
        let run_dir = tmp.path().join(run_name);
        let dir = run_dir.to_str().unwrap();
        let run = |args: &[&str]| {
            let argv: Vec<String> = std::iter::once("exitgate".to_string())
                .chain(args.iter().map(|s| s.to_string()))
                .collect();
            assert_eq!(exitgate::cli::run(argv), 0, "command failed: {args:?}");
        };
        run(&[
            "gen-data",
            "--config",
            config_path.to_str().unwrap(),
            "--run-dir",
            dir,
        ]);
        for phase in [
            "train-ec",
            "build-dc-data",
            "train-dc",
            "tune",
            "infer",
            "curve",
            "verify-bound",
            "report",
        ] {
            run(&[phase, "--run-dir", dir]);
        }

        let mut files = Vec::new();
        for sub in ["data", "model", "dc", "reports"] {
            for entry in std::fs::read_dir(run_dir.join(sub)).unwrap() {
                let path = entry.unwrap().path();
                if path.is_file() {
                    files.push(path);
                }
            }
        }
        files.push(run_dir.join("manifest.json"));
        files.push(run_dir.join("config.json"));
        files.sort();
        csv_files.push(files);
    }

    assert_eq!(csv_files[0].len(), csv_files[1].len());
    let mut compared_csvs = 0;
    for (a, b) in csv_files[0].iter().zip(&csv_files[1]) {
        assert_eq!(
            a.strip_prefix(tmp.path().join("a")).ok(),
            b.strip_prefix(tmp.path().join("b")).ok()
        );
        let bytes_a = std::fs::read(a).unwrap();
        let bytes_b = std::fs::read(b).unwrap();
        assert_eq!(bytes_a, bytes_b, "artifact differs: {}", a.display());
        if a.extension().is_some_and(|e| e == "csv") {
            compared_csvs += 1;
        }
    }
    assert!(compared_csvs >= 9, "expected all CSV artifacts, saw {compared_csvs}");
    println!(
        "ACCEPTANCE 9 PASS: two replays produced byte-identical artifacts ({compared_csvs} CSVs plus checkpoint, manifest, reports)"
    );
}
