//! Run configuration, the run-directory layout, and the manifest that makes a
//! run replayable: the effective config, phase progress, and a checksum for
//! every artifact written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation::Activation;
use crate::data::ShiftKind;
use crate::error::{Error, Result};
use crate::gate::Thresholds;
use crate::tune::{default_alpha_grid, default_beta_grid};

pub const CONFIG_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

/// Environment variable naming the root under which run directories live.
pub const RUN_ROOT_ENV: &str = "EXITGATE_RUN_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub kind: ShiftKind,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dims: usize,
    pub classes: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    /// Cluster standard deviation.
    pub overlap: f64,
    #[serde(default)]
    pub fake_fraction: f64,
    #[serde(default)]
    pub fake_signature: f64,
    /// Covariate shift applied to a copy of the test split.
    pub shift: ShiftConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub shared_dc: bool,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub freeze_backbone: bool,
}

fn default_patience() -> usize {
    2
}

fn default_validation_fraction() -> f64 {
    0.15
}

/// Default hard-label percentage.
pub const DEFAULT_K_PERCENT: f64 = 33.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcSection {
    #[serde(default = "default_k_percent")]
    pub k_percent: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_holdout_fraction")]
    pub holdout_fraction: f64,
}

fn default_k_percent() -> f64 {
    DEFAULT_K_PERCENT
}

fn default_holdout_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    #[serde(default = "default_alpha_grid")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_beta_grid")]
    pub betas: Vec<f64>,
}

impl Default for TuningSection {
    fn default() -> Self {
        TuningSection {
            alphas: default_alpha_grid(),
            betas: default_beta_grid(),
        }
    }
}

fn default_gamma() -> f64 {
    0.1
}

/// The whole run configuration; one JSON document drives every phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSection,
    pub ec: EcSection,
    pub dc: DcSection,
    #[serde(default)]
    pub tuning: TuningSection,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported config version {}",
                self.version
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument("gamma must be in (0, 1)".into()));
        }
        if !(self.dc.k_percent > 0.0 && self.dc.k_percent < 100.0) {
            return Err(Error::InvalidArgument(
                "k_percent must be strictly between 0 and 100".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Shape summary recorded once the model exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub classes: usize,
    pub hidden_widths: Vec<usize>,
    pub shared_dc: bool,
}

/// Everything needed to replay a run plus integrity data for its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    /// Effective configuration (CLI overrides already applied).
    pub config: ExperimentConfig,
    pub model_shape: Option<ModelShape>,
    pub chosen_thresholds: Option<Thresholds>,
    /// Per-layer deferral-head holdout error rates from phase 3.
    pub dc_holdout_errors: Option<Vec<f64>>,
    /// Phases completed, in order.
    pub phases: Vec<String>,
    /// Artifact path (relative to the run dir) to SHA-256 of its bytes.
    pub checksums: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: ExperimentConfig) -> Self {
        RunManifest {
            version: MANIFEST_VERSION,
            config,
            model_shape: None,
            chosen_thresholds: None,
            dc_holdout_errors: None,
            phases: Vec::new(),
            checksums: BTreeMap::new(),
        }
    }

    pub fn mark_phase(&mut self, phase: &str) {
        if !self.phases.iter().any(|p| p == phase) {
            self.phases.push(phase.to_string());
        }
    }

    pub fn has_phase(&self, phase: &str) -> bool {
        self.phases.iter().any(|p| p == phase)
    }

    pub fn load(run: &RunDir) -> Result<Self> {
        let path = run.manifest();
        let text =
            fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, run: &RunDir) -> Result<()> {
        let path = run.manifest();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Hashes an artifact just written under the run dir and records it.
    pub fn record_artifact(&mut self, run: &RunDir, relative: &str) -> Result<()> {
        let digest = sha256_file(&run.root().join(relative))?;
        self.checksums.insert(relative.to_string(), digest);
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

/// Fixed run-directory layout: `data/`, `model/`, `dc/`, `reports/`.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ensure_layout(&self) -> Result<()> {
        for dir in ["data", "model", "dc", "reports"] {
            let path = self.root.join(dir);
            fs::create_dir_all(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn train_csv(&self) -> PathBuf {
        self.root.join("data/train.csv")
    }

    pub fn val_csv(&self) -> PathBuf {
        self.root.join("data/val.csv")
    }

    pub fn test_csv(&self) -> PathBuf {
        self.root.join("data/test.csv")
    }

    pub fn test_shift_csv(&self) -> PathBuf {
        self.root.join("data/test_shift.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model/checkpoint.json")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("model/train_log.csv")
    }

    pub fn profiles_csv(&self) -> PathBuf {
        self.root.join("dc/profiles.csv")
    }

    pub fn dc_report_csv(&self) -> PathBuf {
        self.root.join("dc/dc_report.csv")
    }

    pub fn grid_csv(&self) -> PathBuf {
        self.root.join("reports/grid.csv")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("reports/metrics.csv")
    }

    pub fn metrics_shift_csv(&self) -> PathBuf {
        self.root.join("reports/metrics_shift.csv")
    }

    pub fn curve_csv(&self) -> PathBuf {
        self.root.join("reports/curve.csv")
    }

    pub fn curve_shift_csv(&self) -> PathBuf {
        self.root.join("reports/curve_shift.csv")
    }

    pub fn bound_report(&self) -> PathBuf {
        self.root.join("reports/bound.txt")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("reports/summary.txt")
    }
}
