//! Weekly relapse prediction: window samples, feature extraction,
//! quantization, a balanced random forest, and leave-one-patient-out
//! evaluation with age-based personalization.

mod brf;
mod evaluate;
mod features;
mod quantize;

pub use brf::{fit_brf, predict_proba, BrfModel, Node, Tree, DEFAULT_N_TREES};
pub use evaluate::{
    f2_from_pr, lopo_evaluate, metrics, personalization_subset, random_baseline,
    select_features, tune_hyperparameters, EvaluationReport, FoldOutcome, Metrics,
    PredictionRow, TunedParams,
};
pub use features::{
    extract_baseline_features, extract_clustering_features, make_window_samples,
    DEFAULT_STRIDE, FEATURE_WINDOW_DAYS, PREDICTION_WINDOW_DAYS, PRE_RELAPSE_DAYS,
    TEMPLATE_FEATURE_MODALITIES,
};
pub use quantize::{fit_quantizer, quantize, BinSpec, QuantizerSpec};

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// One weekly prediction sample: features from a 28-day window ending at
/// `window_end`, labeled by the following 7 days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub patient_id: String,
    pub window_end: NaiveDate,
    pub label: bool,
    pub age: f64,
    pub features: BTreeMap<String, f64>,
    /// Names of features that had no data in this window and were left to
    /// impute as 0.
    pub imputed: Vec<String>,
}

/// Which feature families feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    All,
    Baseline,
    Clustering,
    Gmm,
    Pam,
    GmmBaseline,
    PamBaseline,
}

impl FeatureSet {
    pub const ALL_SETS: [FeatureSet; 7] = [
        FeatureSet::All,
        FeatureSet::Baseline,
        FeatureSet::Clustering,
        FeatureSet::Gmm,
        FeatureSet::Pam,
        FeatureSet::GmmBaseline,
        FeatureSet::PamBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::All => "all",
            FeatureSet::Baseline => "baseline",
            FeatureSet::Clustering => "clustering",
            FeatureSet::Gmm => "gmm",
            FeatureSet::Pam => "pam",
            FeatureSet::GmmBaseline => "gmm+baseline",
            FeatureSet::PamBaseline => "pam+baseline",
        }
    }

    pub fn parse(s: &str) -> Option<FeatureSet> {
        Self::ALL_SETS.into_iter().find(|f| f.name() == s)
    }

    /// Whether a named feature belongs to this set. Clustering features are
    /// prefixed `gmm_` / `pam_`; everything else is baseline.
    pub fn includes(self, feature: &str) -> bool {
        let gmm = feature.starts_with("gmm_");
        let pam = feature.starts_with("pam_");
        match self {
            FeatureSet::All => true,
            FeatureSet::Baseline => !gmm && !pam,
            FeatureSet::Clustering => gmm || pam,
            FeatureSet::Gmm => gmm,
            FeatureSet::Pam => pam,
            FeatureSet::GmmBaseline => !pam,
            FeatureSet::PamBaseline => !gmm,
        }
    }
}

impl std::fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameter grids searched by the inner cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub n_bins: Vec<usize>,
    pub subset_size: Vec<usize>,
    pub n_features: Vec<usize>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            n_bins: vec![2, 3, 4, 5, 10, 15],
            subset_size: vec![50, 75, 100, 125, 150, 200, 300],
            n_features: vec![3, 5, 10, 15],
        }
    }
}

/// Dense feature matrix over a fixed, sorted feature-name vocabulary.
/// Absent features read as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub patient_ids: Vec<String>,
    pub ages: Vec<f64>,
    pub window_ends: Vec<NaiveDate>,
}

impl FeatureTable {
    /// Builds the dense table, keeping only the selected feature family.
    pub fn from_samples(samples: &[WindowSample], set: FeatureSet) -> FeatureTable {
        let mut vocab: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
        for s in samples {
            for name in s.features.keys() {
                if set.includes(name) {
                    vocab.insert(name);
                }
            }
            for name in &s.imputed {
                if set.includes(name) {
                    vocab.insert(name);
                }
            }
        }
        let names: Vec<String> = vocab.into_iter().map(str::to_string).collect();
        let rows = samples
            .iter()
            .map(|s| {
                names
                    .iter()
                    .map(|n| s.features.get(n).copied().unwrap_or(0.0))
                    .collect()
            })
            .collect();
        FeatureTable {
            names,
            rows,
            labels: samples.iter().map(|s| s.label).collect(),
            patient_ids: samples.iter().map(|s| s.patient_id.clone()).collect(),
            ages: samples.iter().map(|s| s.age).collect(),
            window_ends: samples.iter().map(|s| s.window_end).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct patient ids in first-appearance order with their row
    /// indices (rows arrive in canonical batch order, so this is id order).
    pub fn patients(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, id) in self.patient_ids.iter().enumerate() {
            if !groups.contains_key(id) {
                order.push(id.clone());
            }
            groups.entry(id.clone()).or_default().push(i);
        }
        order
            .into_iter()
            .map(|id| {
                let idx = groups.remove(&id).unwrap();
                (id, idx)
            })
            .collect()
    }
}
