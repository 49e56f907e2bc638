//! Synthetic datasets, covariate-shift transforms, and CSV interchange.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    Unspecified,
}

/// A labeled feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    pub split: SplitTag,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        split: SplitTag,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape("dataset rows", features.rows(), labels.len()));
        }
        Ok(Dataset {
            features,
            labels,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    /// Number of classes implied by the labels (`max + 1`).
    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }
}

/// Recipe for a Gaussian-mixture dataset with an optional fraction of
/// confidently-wrong points.
///
/// Class centroids sit on a radius-2 circle in the first two feature
/// dimensions (a line when `dims == 1`); every cluster is isotropic with
/// standard deviation `overlap`. A `fake_fraction` of the points keep their
/// label but are drawn inside another class's cluster (at half spread), so a
/// feature-based classifier is confidently wrong on them. Those points are
/// additionally offset by `fake_signature` along the last feature dimension,
/// giving hardness a learnable trace without changing which cluster the
/// point sits in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dims: usize,
    pub classes: usize,
    pub samples: usize,
    /// Cluster standard deviation; 0 collapses every cluster to its centroid.
    pub overlap: f64,
    #[serde(default)]
    pub fake_fraction: f64,
    #[serde(default)]
    pub fake_signature: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::InvalidArgument("dims must be > 0".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if self.samples < self.classes {
            return Err(Error::InvalidArgument(
                "need at least one sample per class".into(),
            ));
        }
        if self.overlap < 0.0 || !self.overlap.is_finite() {
            return Err(Error::InvalidArgument("overlap must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.fake_fraction) {
            return Err(Error::InvalidArgument(
                "fake_fraction must be in [0, 1)".into(),
            ));
        }
        if !self.fake_signature.is_finite() {
            return Err(Error::InvalidArgument("fake_signature must be finite".into()));
        }
        Ok(())
    }

    /// Centroid of class `c`.
    pub fn centroid(&self, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dims];
        if self.dims == 1 {
            v[0] = 4.0 * c as f64;
        } else {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / self.classes as f64;
            v[0] = 2.0 * angle.cos();
            v[1] = 2.0 * angle.sin();
        }
        v
    }
}

/// Generates the mixture described by `spec`. Same spec, same bytes.
pub fn gen_mixture(spec: &MixtureSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.samples;
    let d = spec.dims;

    // Balanced labels, then a seeded choice of which samples are fake.
    let labels: Vec<usize> = (0..m).map(|i| i % spec.classes).collect();
    let fake_count = (spec.fake_fraction * m as f64).round() as usize;
    let mut order: Vec<usize> = (0..m).collect();
    shuffle(&mut order, &mut rng);
    let mut fake = vec![false; m];
    for &i in order.iter().take(fake_count) {
        fake[i] = true;
    }

    let mut data = Vec::with_capacity(m * d);
    for (i, &label) in labels.iter().enumerate() {
        // Constant per-sample draw count keeps the stream aligned regardless
        // of the fake flag.
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let wrong_offset = rng.random_range(1..spec.classes);
        if fake[i] {
            let wrong = (label + wrong_offset) % spec.classes;
            let centroid = spec.centroid(wrong);
            for (j, c) in centroid.iter().enumerate() {
                let mut v = c + 0.5 * spec.overlap * z[j];
                if j == d - 1 {
                    v += spec.fake_signature;
                }
                data.push(v);
            }
        } else {
            let centroid = spec.centroid(label);
            for (j, c) in centroid.iter().enumerate() {
                data.push(c + spec.overlap * z[j]);
            }
        }
    }

    Dataset::new(
        Matrix::from_vec(m, d, data)?,
        labels,
        SplitTag::Unspecified,
        format!(
            "mixture(dims={},classes={},samples={},overlap={},fake_fraction={},fake_signature={},seed={})",
            spec.dims, spec.classes, spec.samples, spec.overlap, spec.fake_fraction,
            spec.fake_signature, spec.seed
        ),
    )
}

/// Fisher-Yates with our seeded generator, for reproducible permutations.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    Translate,
    Noise,
    Rotate,
}

impl std::fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShiftKind::Translate => f.write_str("translate"),
            ShiftKind::Noise => f.write_str("noise"),
            ShiftKind::Rotate => f.write_str("rotate"),
        }
    }
}

impl std::str::FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(ShiftKind::Translate),
            "noise" => Ok(ShiftKind::Noise),
            "rotate" => Ok(ShiftKind::Rotate),
            other => Err(Error::InvalidArgument(format!("unknown shift kind {other:?}"))),
        }
    }
}

/// Applies a covariate shift to the features, preserving labels. Magnitude 0
/// is the identity. `seed` is consumed only by the noise transform.
pub fn shift(dataset: &Dataset, kind: ShiftKind, magnitude: f64, seed: u64) -> Result<Dataset> {
    if magnitude < 0.0 || !magnitude.is_finite() {
        return Err(Error::InvalidArgument("shift magnitude must be >= 0".into()));
    }
    if magnitude == 0.0 {
        return Ok(dataset.clone());
    }
    let m = dataset.len();
    let d = dataset.dims();
    let mut data = Vec::with_capacity(m * d);
    match kind {
        ShiftKind::Translate => {
            for i in 0..m {
                for &v in dataset.feature_row(i) {
                    data.push(v + magnitude);
                }
            }
        }
        ShiftKind::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..m {
                for &v in dataset.feature_row(i) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(v + magnitude * z);
                }
            }
        }
        ShiftKind::Rotate => {
            if d < 2 {
                return Err(Error::InvalidArgument(
                    "rotation needs at least 2 dimensions".into(),
                ));
            }
            let (sin, cos) = magnitude.sin_cos();
            for i in 0..m {
                let row = dataset.feature_row(i);
                let (x, y) = (row[0], row[1]);
                data.push(cos * x - sin * y);
                data.push(sin * x + cos * y);
                data.extend_from_slice(&row[2..]);
            }
        }
    }
    Dataset::new(
        Matrix::from_vec(m, d, data)?,
        dataset.labels.clone(),
        dataset.split,
        format!("{} |> {kind}({magnitude})", dataset.provenance),
    )
}

/// Writes `f1..fd,label` rows; floats use the shortest representation that
/// parses back to the identical value.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for j in 0..dataset.dims() {
        out.push_str(&format!("f{},", j + 1));
    }
    out.push_str("label\n");
    for i in 0..dataset.len() {
        for v in dataset.feature_row(i) {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", dataset.label(i)));
    }
    let mut file =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a dataset written by [`save_csv`] (or any `f1..fd,label` table).
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path.display().to_string(), io_from_csv(e)),
            _ => Error::Parse {
                line: 1,
                reason: e.to_string(),
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if headers.len() < 2 || headers.iter().next_back() != Some("label") {
        return Err(Error::Parse {
            line: 1,
            reason: "expected header f1..fd,label".into(),
        });
    }
    let dims = headers.len() - 1;
    for (j, name) in headers.iter().take(dims).enumerate() {
        if name != format!("f{}", j + 1) {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected column f{}, found {name:?}", j + 1),
            });
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dims + 1 {
            return Err(Error::Parse {
                line,
                reason: format!("expected {} fields, found {}", dims + 1, record.len()),
            });
        }
        for j in 0..dims {
            let v: f64 = record[j].trim().parse().map_err(|_| Error::Parse {
                line,
                reason: format!("non-numeric feature {:?} in column f{}", &record[j], j + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    reason: format!("non-finite feature in column f{}", j + 1),
                });
            }
            data.push(v);
        }
        let label: usize = record[dims].trim().parse().map_err(|_| Error::Parse {
            line,
            reason: format!("invalid label {:?}", &record[dims]),
        })?;
        labels.push(label);
    }

    let rows = labels.len();
    Dataset::new(
        Matrix::from_vec(rows, dims, data)?,
        labels,
        SplitTag::Unspecified,
        format!("csv({})", path.display()),
    )
}

fn io_from_csv(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    }
}
