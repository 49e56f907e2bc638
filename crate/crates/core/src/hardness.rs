//! Hard/easy labeling for deferral-head training.
//!
//! Every training sample is profiled by its true-class probability at each
//! layer; samples are sorted by the profile mean and the lowest K% are
//! labeled hard. The variability is reported alongside but plays no role in
//! the labeling decision.

use std::io::Write;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::MultiExitModel;

/// Per-sample confidence profile across layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceProfile {
    pub sample_id: usize,
    /// True-class probability at each layer.
    pub per_layer: Vec<f64>,
    /// Arithmetic mean of `per_layer`.
    pub mean: f64,
    /// Population variance `Σ (p_i - mean)² / n`.
    pub variability: f64,
}

impl ConfidenceProfile {
    pub fn from_scores(sample_id: usize, per_layer: Vec<f64>) -> Self {
        let n = per_layer.len() as f64;
        let mean = per_layer.iter().sum::<f64>() / n;
        let variability = per_layer.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        ConfidenceProfile {
            sample_id,
            per_layer,
            mean,
            variability,
        }
    }
}

/// Profiles every sample with the trained model. Read-only on the model.
pub fn profile(model: &MultiExitModel, dataset: &Dataset) -> Result<Vec<ConfidenceProfile>> {
    let mut out = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let scores = model.true_class_probs(dataset.feature_row(i), dataset.label(i))?;
        out.push(ConfidenceProfile::from_scores(i, scores));
    }
    Ok(out)
}

/// One labeled example for deferral-head training.
#[derive(Debug, Clone, PartialEq)]
pub struct HardnessExample {
    pub sample_id: usize,
    pub features: Vec<f64>,
    /// 1 = hard, 0 = easy.
    pub hard: bool,
}

/// The deferral-training set: samples sorted ascending by profile mean, the
/// first `hard_count` labeled hard.
#[derive(Debug, Clone, PartialEq)]
pub struct HardnessLabeledSet {
    pub examples: Vec<HardnessExample>,
    pub k_percent: f64,
    pub hard_count: usize,
}

impl HardnessLabeledSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Sorts profiles ascending by mean (ties by sample id) and labels the first
/// `round(K·m/100)` samples hard. Features are copied from `dataset` by
/// sample id.
pub fn label_hard(
    profiles: &[ConfidenceProfile],
    dataset: &Dataset,
    k_percent: f64,
) -> Result<HardnessLabeledSet> {
    if !(k_percent > 0.0 && k_percent < 100.0) {
        return Err(Error::InvalidArgument(format!(
            "K must be strictly between 0 and 100, got {k_percent}"
        )));
    }
    if profiles.is_empty() {
        return Err(Error::InvalidArgument("no profiles to label".into()));
    }
    let m = profiles.len();
    let hard_count = (k_percent * m as f64 / 100.0).round() as usize;

    let mut order: Vec<&ConfidenceProfile> = profiles.iter().collect();
    order.sort_by(|a, b| {
        a.mean
            .partial_cmp(&b.mean)
            .expect("profile means are finite")
            .then(a.sample_id.cmp(&b.sample_id))
    });

    let examples = order
        .iter()
        .enumerate()
        .map(|(rank, p)| HardnessExample {
            sample_id: p.sample_id,
            features: dataset.feature_row(p.sample_id).to_vec(),
            hard: rank < hard_count,
        })
        .collect();

    Ok(HardnessLabeledSet {
        examples,
        k_percent,
        hard_count,
    })
}

/// Exports profiles with their labels: `sample_id,p_layer_1..n,mu,sigma,label`,
/// ordered by sample id.
pub fn write_profiles_csv(
    profiles: &[ConfidenceProfile],
    labeled: &HardnessLabeledSet,
    path: &Path,
) -> Result<()> {
    let layers = profiles.first().map_or(0, |p| p.per_layer.len());
    let mut hard = vec![false; profiles.len()];
    for e in &labeled.examples {
        if let Some(slot) = hard.get_mut(e.sample_id) {
            *slot = e.hard;
        }
    }
    let mut out = String::from("sample_id,");
    for i in 1..=layers {
        out.push_str(&format!("p_layer_{i},"));
    }
    out.push_str("mu,sigma,label\n");
    for p in profiles {
        out.push_str(&format!("{},", p.sample_id));
        for v in &p.per_layer {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!(
            "{},{},{}\n",
            p.mean,
            p.variability,
            if hard[p.sample_id] { 1 } else { 0 }
        ));
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitTag;
    use crate::matrix::Matrix;

    #[test]
    fn mean_and_variability_match_direct_formulas() {
        let p = ConfidenceProfile::from_scores(0, vec![0.9, 0.8, 1.0]);
        assert!((p.mean - 0.9).abs() < 1e-12);
        // (0 + 0.01 + 0.01) / 3
        assert!((p.variability - 0.02 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_profile_has_zero_variability() {
        let p = ConfidenceProfile::from_scores(3, vec![0.4; 5]);
        assert_eq!(p.variability, 0.0);
        assert!((p.mean - 0.4).abs() < 1e-15);
    }

    fn dataset_of(rows: usize) -> Dataset {
        Dataset::new(
            Matrix::from_vec(rows, 1, (0..rows).map(|i| i as f64).collect()).unwrap(),
            vec![0; rows],
            SplitTag::Train,
            "fixture",
        )
        .unwrap()
    }

    fn profiles_from_means(means: &[f64]) -> Vec<ConfidenceProfile> {
        means
            .iter()
            .enumerate()
            .map(|(i, &m)| ConfidenceProfile::from_scores(i, vec![m, m]))
            .collect()
    }

    #[test]
    fn k33_on_six_samples_marks_the_two_lowest() {
        let profiles = profiles_from_means(&[0.2, 0.3, 0.5, 0.7, 0.8, 0.9]);
        let data = dataset_of(6);
        let labeled = label_hard(&profiles, &data, 33.0).unwrap();
        // round(0.33 * 6) = 2
        assert_eq!(labeled.hard_count, 2);
        let hard_ids: Vec<usize> = labeled
            .examples
            .iter()
            .filter(|e| e.hard)
            .map(|e| e.sample_id)
            .collect();
        assert_eq!(hard_ids, vec![0, 1]);
    }

    #[test]
    fn ties_break_by_ascending_sample_id() {
        let profiles = profiles_from_means(&[0.5; 5]);
        let data = dataset_of(5);
        let labeled = label_hard(&profiles, &data, 40.0).unwrap();
        assert_eq!(labeled.hard_count, 2);
        let hard_ids: Vec<usize> = labeled
            .examples
            .iter()
            .filter(|e| e.hard)
            .map(|e| e.sample_id)
            .collect();
        assert_eq!(hard_ids, vec![0, 1]);
    }

    #[test]
    fn every_hard_mean_is_at_most_every_easy_mean() {
        let means = [0.41, 0.13, 0.95, 0.27, 0.66, 0.52, 0.08, 0.77, 0.31, 0.59];
        let profiles = profiles_from_means(&means);
        let data = dataset_of(means.len());
        let labeled = label_hard(&profiles, &data, 33.0).unwrap();
        let max_hard = labeled
            .examples
            .iter()
            .filter(|e| e.hard)
            .map(|e| means[e.sample_id])
            .fold(f64::NEG_INFINITY, f64::max);
        let min_easy = labeled
            .examples
            .iter()
            .filter(|e| !e.hard)
            .map(|e| means[e.sample_id])
            .fold(f64::INFINITY, f64::min);
        assert!(max_hard <= min_easy);
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        let profiles = profiles_from_means(&[0.5, 0.6]);
        let data = dataset_of(2);
        assert!(label_hard(&profiles, &data, 0.0).is_err());
        assert!(label_hard(&profiles, &data, 100.0).is_err());
        assert!(label_hard(&profiles, &data, -3.0).is_err());
    }

    #[test]
    fn hard_count_is_exactly_rounded_for_various_k_and_m() {
        for m in [3usize, 7, 10, 50, 101] {
            for k in [10.0, 33.0, 50.0, 66.0, 90.0] {
                let profiles = profiles_from_means(&vec![0.5; m]);
                let data = dataset_of(m);
                let labeled = label_hard(&profiles, &data, k).unwrap();
                let expected = (k * m as f64 / 100.0).round() as usize;
                assert_eq!(labeled.hard_count, expected, "m={m} k={k}");
                let actual = labeled.examples.iter().filter(|e| e.hard).count();
                assert_eq!(actual, expected);
            }
        }
    }
}
