//! Command-line surface tying the phases together. Every subcommand reads the
//! run directory's manifest (or, for `gen-data`, a config document), performs
//! one phase, and records its artifacts and their checksums back into the
//! manifest.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::data::{load_csv, save_csv, SplitTag};
use crate::error::{Error, Result};
use crate::experiment::{
    build_dc_data, curve_betas, dc_train_config, ec_train_config, generate_datasets, init_model,
};
use crate::gate::{evaluate, GoldOracle, SelectiveMetrics, Thresholds};
use crate::hardness::{label_hard, profile, write_profiles_csv};
use crate::manifest::{
    ExperimentConfig, ModelShape, RunDir, RunManifest, RUN_ROOT_ENV,
};
use crate::model::MultiExitModel;
use crate::train_dc::{train_dcs, write_dc_report};
use crate::train_ec::{train_ecs, write_train_log};
use crate::tune::{grid_search, risk_coverage_curve};

#[derive(Parser)]
#[command(
    name = "exitgate",
    version,
    about = "Train, tune, and evaluate a gated early-exit classifier with expert deferral"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test splits (plus a shifted test copy) into a run directory.
    GenData {
        /// Run configuration document (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to $EXITGATE_RUN_ROOT/<config stem>.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Phase 1: train backbone and exit heads.
    TrainEc {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Profile the training split and label the lowest-confidence K% hard.
    BuildDcData {
        #[arg(long)]
        run_dir: PathBuf,
        /// Override the config's K.
        #[arg(long)]
        k_percent: Option<f64>,
    },
    /// Phase 3: train deferral heads on the hard/easy labels.
    TrainDc {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Grid search (alpha, beta) on the validation split.
    Tune {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Evaluate gated inference on the test splits at the chosen thresholds.
    Infer {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Export risk-coverage curves for the clean and shifted test splits.
    Curve {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Check the worst-layer deferral-error bound against measured rates.
    VerifyBound {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Assemble a one-page summary of the run.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

/// Parses and executes `argv`, returning the process exit code: 0 on success,
/// 2 for usage errors, 1 for runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn default_run_dir(config_path: &std::path::Path) -> PathBuf {
    let root = std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    root.join(stem)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            config,
            run_dir,
            seed,
        } => {
            let run = RunDir::new(run_dir.unwrap_or_else(|| default_run_dir(&config)));
            gen_data(&run, &config, seed)
        }
        Command::TrainEc { run_dir } => train_ec(&RunDir::new(run_dir)),
        Command::BuildDcData { run_dir, k_percent } => {
            build_dc_labels(&RunDir::new(run_dir), k_percent)
        }
        Command::TrainDc { run_dir } => train_dc(&RunDir::new(run_dir)),
        Command::Tune { run_dir } => tune(&RunDir::new(run_dir)),
        Command::Infer {
            run_dir,
            alpha,
            beta,
        } => infer_phase(&RunDir::new(run_dir), alpha, beta),
        Command::Curve { run_dir, alpha } => curve_phase(&RunDir::new(run_dir), alpha),
        Command::VerifyBound { run_dir, gamma } => verify_bound(&RunDir::new(run_dir), gamma),
        Command::Report { run_dir } => report(&RunDir::new(run_dir)),
    }
}

fn gen_data(run: &RunDir, config_path: &std::path::Path, seed: Option<u64>) -> Result<()> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    run.ensure_layout()?;
    config.save(&run.config())?;

    let data = generate_datasets(&config)?;
    save_csv(&data.train, &run.train_csv())?;
    save_csv(&data.val, &run.val_csv())?;
    save_csv(&data.test, &run.test_csv())?;
    save_csv(&data.test_shift, &run.test_shift_csv())?;

    let mut manifest = RunManifest::new(config);
    for artifact in [
        "config.json",
        "data/train.csv",
        "data/val.csv",
        "data/test.csv",
        "data/test_shift.csv",
    ] {
        manifest.record_artifact(run, artifact)?;
    }
    manifest.mark_phase("gen-data");
    manifest.save(run)?;
    println!(
        "gen-data: wrote {} train / {} val / {} test samples under {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        run.root().display()
    );
    Ok(())
}

fn require_phase(manifest: &RunManifest, phase: &str) -> Result<()> {
    if !manifest.has_phase(phase) {
        return Err(Error::InvalidArgument(format!(
            "phase {phase:?} has not run in this run directory"
        )));
    }
    Ok(())
}

fn train_ec(run: &RunDir) -> Result<()> {
    let mut manifest = RunManifest::load(run)?;
    require_phase(&manifest, "gen-data")?;
    let train = load_csv(&run.train_csv())?.with_split(SplitTag::Train);
    let mut model = init_model(&manifest.config)?;
    let report = train_ecs(&mut model, &train, &ec_train_config(&manifest.config))?;
    model.save(&run.checkpoint())?;
    write_train_log(&report, &run.train_log())?;

    manifest.model_shape = Some(ModelShape {
        input_dim: model.input_dim(),
        classes: model.classes(),
        hidden_widths: model.hidden_widths(),
        shared_dc: model.shared_dc(),
    });
    manifest.record_artifact(run, "model/checkpoint.json")?;
    manifest.record_artifact(run, "model/train_log.csv")?;
    manifest.mark_phase("train-ec");
    manifest.save(run)?;
    if let Some(last) = report.epochs.last() {
        println!(
            "train-ec: {} epochs, final val accuracy per layer: {}",
            report.epochs.len(),
            last.per_layer
                .iter()
                .map(|l| format!("{:.3}", l.val_accuracy))
                .collect::<Vec<_>>()
                .join(" ")
        );
    } else {
        println!("train-ec: 0 epochs, model left at initialization");
    }
    Ok(())
}

fn build_dc_labels(run: &RunDir, k_percent: Option<f64>) -> Result<()> {
    let mut manifest = RunManifest::load(run)?;
    require_phase(&manifest, "train-ec")?;
    if let Some(k) = k_percent {
        manifest.config.dc.k_percent = k;
        manifest.config.validate()?;
    }
    let model = MultiExitModel::load(&run.checkpoint())?;
    let train = load_csv(&run.train_csv())?.with_split(SplitTag::Train);
    let profiles = profile(&model, &train)?;
    let labeled = label_hard(&profiles, &train, manifest.config.dc.k_percent)?;
    write_profiles_csv(&profiles, &labeled, &run.profiles_csv())?;

    manifest.record_artifact(run, "dc/profiles.csv")?;
    manifest.mark_phase("build-dc-data");
    manifest.save(run)?;
    println!(
        "build-dc-data: {} samples, {} hard (K={}%)",
        labeled.len(),
        labeled.hard_count,
        manifest.config.dc.k_percent
    );
    Ok(())
}

fn train_dc(run: &RunDir) -> Result<()> {
    let mut manifest = RunManifest::load(run)?;
    require_phase(&manifest, "build-dc-data")?;
    let mut model = MultiExitModel::load(&run.checkpoint())?;
    let train = load_csv(&run.train_csv())?.with_split(SplitTag::Train);
    let labeled = build_dc_data(&model, &train, manifest.config.dc.k_percent)?;
    let report = train_dcs(&mut model, &labeled, &dc_train_config(&manifest.config))?;
    model.save(&run.checkpoint())?;
    write_dc_report(&report, &run.dc_report_csv())?;

    manifest.dc_holdout_errors = Some(report.holdout_errors());
    manifest.record_artifact(run, "model/checkpoint.json")?;
    manifest.record_artifact(run, "dc/dc_report.csv")?;
    manifest.mark_phase("train-dc");
    manifest.save(run)?;
    println!(
        "train-dc: holdout deferral error per layer: {}",
        report
            .per_layer
            .iter()
            .map(|l| format!("{:.3}", l.holdout_error))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(())
}

fn metrics_csv_row(t: Thresholds, m: &SelectiveMetrics) -> String {
    let hist = m
        .exit_histogram()
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "{},{},{},{},{},{},{}\n",
        t.alpha, t.beta, m.risk, m.coverage, m.speedup, m.deferrals, hist
    )
}

fn metrics_csv_header(layers: usize) -> String {
    let hist: Vec<String> = (1..=layers).map(|i| format!("exit_hist_{i}")).collect();
    format!(
        "alpha,beta,risk,coverage,speedup,deferrals,{}\n",
        hist.join(",")
    )
}

fn write_text(path: &std::path::Path, text: &str) -> Result<()> {
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn tune(run: &RunDir) -> Result<()> {
    let mut manifest = RunManifest::load(run)?;
    require_phase(&manifest, "train-dc")?;
    let model = MultiExitModel::load(&run.checkpoint())?;
    let val = load_csv(&run.val_csv())?.with_split(SplitTag::Val);
    let oracle = GoldOracle::for_dataset(&val);
    let result = grid_search(
        &model,
        &val,
        &manifest.config.tuning.alphas,
        &manifest.config.tuning.betas,
        &oracle,
    )?;

    let mut csv = metrics_csv_header(model.layer_count());
    for cell in &result.cells {
        csv.push_str(&metrics_csv_row(cell.thresholds, &cell.metrics));
    }
    write_text(&run.grid_csv(), &csv)?;

    manifest.chosen_thresholds = Some(result.best);
    manifest.record_artifact(run, "reports/grid.csv")?;
    manifest.mark_phase("tune");
    manifest.save(run)?;
    println!(
        "tune: chose alpha={} beta={} (risk {:.4}, coverage {:.3}, speedup {:.2})",
        result.best.alpha,
        result.best.beta,
        result.best_metrics.risk,
        result.best_metrics.coverage,
        result.best_metrics.speedup
    );
    Ok(())
}

fn resolve_thresholds(
    manifest: &RunManifest,
    alpha: Option<f64>,
    beta: Option<f64>,
) -> Result<Thresholds> {
    match (alpha, beta, manifest.chosen_thresholds) {
        (Some(a), Some(b), _) => Thresholds::new(a, b),
        (None, None, Some(t)) => Ok(t),
        (a, b, Some(t)) => Thresholds::new(a.unwrap_or(t.alpha), b.unwrap_or(t.beta)),
        _ => Err(Error::InvalidArgument(
            "no tuned thresholds in the manifest; run `tune` or pass --alpha and --beta".into(),
        )),
    }
}

fn infer_phase(run: &RunDir, alpha: Option<f64>, beta: Option<f64>) -> Result<()> {
    let mut manifest = RunManifest::load(run)?;
    require_phase(&manifest, "train-dc")?;
    let thresholds = resolve_thresholds(&manifest, alpha, beta)?;
    let model = MultiExitModel::load(&run.checkpoint())?;

    let test = load_csv(&run.test_csv())?.with_split(SplitTag::Test);
    let oracle = GoldOracle::for_dataset(&test);
    let metrics = evaluate(&model, &test, thresholds, &oracle)?;
    let header = metrics_csv_header(model.layer_count());
    write_text(
        &run.metrics_csv(),
        &format!("{header}{}", metrics_csv_row(thresholds, &metrics)),
    )?;

    let shifted = load_csv(&run.test_shift_csv())?.with_split(SplitTag::Test);
    let shift_oracle = GoldOracle::for_dataset(&shifted);
    let shift_metrics = evaluate(&model, &shifted, thresholds, &shift_oracle)?;
    write_text(
        &run.metrics_shift_csv(),
        &format!("{header}{}", metrics_csv_row(thresholds, &shift_metrics)),
    )?;

    manifest.record_artifact(run, "reports/metrics.csv")?;
    manifest.record_artifact(run, "reports/metrics_shift.csv")?;
    manifest.mark_phase("infer");
    manifest.save(run)?;
    println!(
        "infer: clean risk {:.4} coverage {:.3} speedup {:.2}; shifted risk {:.4} coverage {:.3}",
        metrics.risk, metrics.coverage, metrics.speedup, shift_metrics.risk, shift_metrics.coverage
    );
    Ok(())
}

fn curve_phase(run: &RunDir, alpha: Option<f64>) -> Result<()> {
    let mut manifest = RunManifest::load(run)?;
    require_phase(&manifest, "train-dc")?;
    let alpha = match (alpha, manifest.chosen_thresholds) {
        (Some(a), _) => a,
        (None, Some(t)) => t.alpha,
        _ => {
            return Err(Error::InvalidArgument(
                "no tuned thresholds in the manifest; run `tune` or pass --alpha".into(),
            ))
        }
    };
    let model = MultiExitModel::load(&run.checkpoint())?;
    let betas = curve_betas();

    for (csv_path, artifact, data_path) in [
        (run.curve_csv(), "reports/curve.csv", run.test_csv()),
        (
            run.curve_shift_csv(),
            "reports/curve_shift.csv",
            run.test_shift_csv(),
        ),
    ] {
        let data = load_csv(&data_path)?.with_split(SplitTag::Test);
        let oracle = GoldOracle::for_dataset(&data);
        let curve = risk_coverage_curve(&model, &data, alpha, &betas, &oracle)?;
        let mut csv = String::from("coverage,risk\n");
        for p in &curve {
            csv.push_str(&format!("{},{}\n", p.coverage, p.risk));
        }
        write_text(&csv_path, &csv)?;
        manifest.record_artifact(run, artifact)?;
    }
    manifest.mark_phase("curve");
    manifest.save(run)?;
    println!("curve: swept {} beta values at alpha={}", betas.len(), alpha);
    Ok(())
}

fn verify_bound(run: &RunDir, gamma: Option<f64>) -> Result<()> {
    let mut manifest = RunManifest::load(run)?;
    require_phase(&manifest, "train-dc")?;
    let gamma = gamma.unwrap_or(manifest.config.gamma);
    let dc_errors = manifest
        .dc_holdout_errors
        .clone()
        .ok_or_else(|| Error::InvalidArgument("manifest lacks deferral error rates".into()))?;
    let thresholds = resolve_thresholds(&manifest, None, None)?;
    let model = MultiExitModel::load(&run.checkpoint())?;
    let test = load_csv(&run.test_csv())?.with_split(SplitTag::Test);
    let oracle = GoldOracle::for_dataset(&test);
    let metrics = evaluate(&model, &test, thresholds, &oracle)?;
    let report = crate::bounds::verify_model_bound(&metrics, &dc_errors, gamma)?;

    write_text(&run.bound_report(), &report.to_string())?;
    manifest.record_artifact(run, "reports/bound.txt")?;
    manifest.mark_phase("verify-bound");
    manifest.save(run)?;
    print!("{report}");
    Ok(())
}

fn report(run: &RunDir) -> Result<()> {
    let mut manifest = RunManifest::load(run)?;
    let mut out = String::new();
    out.push_str(&format!("seed: {}\n", manifest.config.seed));
    out.push_str(&format!("phases: {}\n", manifest.phases.join(" -> ")));
    if let Some(shape) = &manifest.model_shape {
        out.push_str(&format!(
            "model: input {} -> widths {:?} -> {} classes (shared_dc={})\n",
            shape.input_dim, shape.hidden_widths, shape.classes, shape.shared_dc
        ));
    }
    if let Some(errors) = &manifest.dc_holdout_errors {
        let rendered: Vec<String> = errors.iter().map(|e| format!("{e:.4}")).collect();
        out.push_str(&format!("deferral holdout error: {}\n", rendered.join(" ")));
    }
    if let Some(t) = manifest.chosen_thresholds {
        out.push_str(&format!("thresholds: alpha={} beta={}\n", t.alpha, t.beta));
    }
    for (name, path) in [
        ("test metrics", run.metrics_csv()),
        ("shifted metrics", run.metrics_shift_csv()),
    ] {
        if path.exists() {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            if let Some(row) = text.lines().nth(1) {
                let fields: Vec<&str> = row.split(',').collect();
                if fields.len() >= 5 {
                    out.push_str(&format!(
                        "{name}: risk={} coverage={} speedup={}\n",
                        fields[2], fields[3], fields[4]
                    ));
                }
            }
        }
    }
    if run.bound_report().exists() {
        let text = std::fs::read_to_string(run.bound_report())
            .map_err(|e| Error::io(run.bound_report().display().to_string(), e))?;
        out.push_str("bound check:\n");
        for line in text.lines() {
            out.push_str(&format!("  {line}\n"));
        }
    }
    write_text(&run.summary(), &out)?;
    manifest.record_artifact(run, "reports/summary.txt")?;
    manifest.mark_phase("report");
    manifest.save(run)?;
    print!("{out}");
    Ok(())
}
