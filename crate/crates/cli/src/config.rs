//! Pipeline configuration: a versioned TOML file with one section per stage.
//!
//! Every value has a default matching the published pipeline, so a minimal
//! config is just `[run]` + a seed. Grid values outside the published search
//! ranges are rejected unless `allow_out_of_range = true` spells out the
//! intent.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use routines_core::gmm::CovarianceType;
use routines_core::predictor::{FeatureSet, Grids};
use routines_core::synth::SynthSpec;

use crate::error::{CliError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Accept grid values outside the published search ranges.
    pub allow_out_of_range: bool,
    pub run: RunSection,
    pub input: InputSection,
    pub synth: SynthSection,
    pub pca: PcaSection,
    pub gmm: GmmSection,
    pub pam: PamSection,
    pub analytics: AnalyticsSection,
    pub predictor: PredictorSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            allow_out_of_range: false,
            run: RunSection::default(),
            input: InputSection::default(),
            synth: SynthSection::default(),
            pca: PcaSection::default(),
            gmm: GmmSection::default(),
            pam: PamSection::default(),
            analytics: AnalyticsSection::default(),
            predictor: PredictorSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Master seed; mandatory unless `--seed` is passed.
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Optional modality registry TOML; the built-in registry otherwise.
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputSection {
    /// Cohort archive to ingest; defaults to `<out>/cohort` (the synth
    /// stage's output).
    pub cohort_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_patients: usize,
    pub days_per_patient: usize,
    pub n_archetypes: usize,
    pub n_relapses: usize,
    pub max_relapse_patients: usize,
    pub ramp: f64,
    pub missing_rate: f64,
    pub noise_scale: f64,
    pub preference_concentration: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        SynthSection {
            n_patients: s.n_patients,
            days_per_patient: s.days_per_patient,
            n_archetypes: s.n_archetypes,
            n_relapses: s.n_relapses,
            max_relapse_patients: s.max_relapse_patients,
            ramp: s.ramp,
            missing_rate: s.missing_rate,
            noise_scale: s.noise_scale,
            preference_concentration: s.preference_concentration,
        }
    }
}

impl SynthSection {
    pub fn to_spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            n_patients: self.n_patients,
            days_per_patient: self.days_per_patient,
            n_archetypes: self.n_archetypes,
            n_relapses: self.n_relapses,
            max_relapse_patients: self.max_relapse_patients,
            ramp: self.ramp,
            missing_rate: self.missing_rate,
            noise_scale: self.noise_scale,
            preference_concentration: self.preference_concentration,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaSection {
    /// Exact component count; overrides `variance_fraction` when set.
    pub components: Option<usize>,
    /// Keep the smallest q whose cumulative explained variance reaches this.
    pub variance_fraction: f64,
}

impl Default for PcaSection {
    fn default() -> Self {
        PcaSection { components: None, variance_fraction: 0.9 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmSection {
    pub k_min: usize,
    pub k_max: usize,
    pub cov_types: Vec<String>,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for GmmSection {
    fn default() -> Self {
        GmmSection {
            k_min: 5,
            k_max: 20,
            cov_types: vec!["spherical".into(), "tied".into(), "diagonal".into(), "full".into()],
            restarts: 5,
            max_iter: 200,
        }
    }
}

impl GmmSection {
    pub fn parsed_cov_types(&self) -> Result<Vec<CovarianceType>> {
        self.cov_types
            .iter()
            .map(|s| match s.as_str() {
                "spherical" => Ok(CovarianceType::Spherical),
                "tied" => Ok(CovarianceType::Tied),
                "diagonal" => Ok(CovarianceType::Diagonal),
                "full" => Ok(CovarianceType::Full),
                other => Err(CliError::Config {
                    key: "gmm.cov_types".into(),
                    message: format!(
                        "unknown covariance type `{other}` (expected spherical, tied, diagonal, or full)"
                    ),
                }),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PamSection {
    pub k_min: usize,
    pub k_max: usize,
    pub inits: usize,
}

impl Default for PamSection {
    fn default() -> Self {
        PamSection { k_min: 5, k_max: 20, inits: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsSection {
    pub nr_windows: Vec<u32>,
}

impl Default for AnalyticsSection {
    fn default() -> Self {
        AnalyticsSection { nr_windows: vec![7, 14, 20, 30] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorSection {
    pub feature_set: String,
    pub personalization: bool,
    /// Days between consecutive window ends.
    pub stride: u32,
    pub n_bins: Vec<usize>,
    pub subset_size: Vec<usize>,
    pub n_features: Vec<usize>,
    /// Monte-Carlo trials for the random baseline.
    pub random_trials: usize,
}

impl Default for PredictorSection {
    fn default() -> Self {
        let g = Grids::default();
        PredictorSection {
            feature_set: "all".into(),
            personalization: true,
            stride: 7,
            n_bins: g.n_bins,
            subset_size: g.subset_size,
            n_features: g.n_features,
            random_trials: 1000,
        }
    }
}

impl PredictorSection {
    pub fn grids(&self) -> Grids {
        Grids {
            n_bins: self.n_bins.clone(),
            subset_size: self.subset_size.clone(),
            n_features: self.n_features.clone(),
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config { key: key.into(), message: message.into() }
}

fn check_grid(
    key: &str,
    values: &[usize],
    range: std::ops::RangeInclusive<usize>,
    allow: bool,
) -> Result<()> {
    if values.is_empty() {
        return Err(bad(key, "grid must not be empty"));
    }
    if !allow {
        if let Some(v) = values.iter().find(|v| !range.contains(v)) {
            return Err(bad(
                key,
                format!(
                    "{v} is outside the published range {}..={} (set allow_out_of_range = true to override)",
                    range.start(),
                    range.end()
                ),
            ));
        }
    }
    Ok(())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let config: PipelineConfig =
            serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
                key: e.path().to_string(),
                message: e.inner().message().to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    /// Structural and published-range checks; errors carry the key path.
    pub fn validate(&self) -> Result<()> {
        let allow = self.allow_out_of_range;
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(bad(
                "schema_version",
                format!("found {}, supported {CONFIG_SCHEMA_VERSION}", self.schema_version),
            ));
        }

        // A placeholder seed keeps SynthSpec validation independent of
        // run.seed, which is resolved (config or --seed) later.
        self.synth.to_spec(0).validate().map_err(|e| bad("synth", e.to_string()))?;

        if let Some(q) = self.pca.components {
            if q == 0 {
                return Err(bad("pca.components", "must be at least 1"));
            }
        }
        if !(self.pca.variance_fraction > 0.0 && self.pca.variance_fraction <= 1.0) {
            return Err(bad("pca.variance_fraction", "must be within (0, 1]"));
        }

        if self.gmm.k_min > self.gmm.k_max {
            return Err(bad("gmm.k_min", "k_min must not exceed k_max"));
        }
        if !allow && (self.gmm.k_min < 5 || self.gmm.k_max > 20) {
            return Err(bad(
                "gmm.k_min",
                "published k range is 5..=20 (set allow_out_of_range = true to override)",
            ));
        }
        if self.gmm.restarts == 0 {
            return Err(bad("gmm.restarts", "must be at least 1"));
        }
        if !allow && self.gmm.restarts > 5 {
            return Err(bad("gmm.restarts", "published value is 5 restarts"));
        }
        if self.gmm.cov_types.is_empty() {
            return Err(bad("gmm.cov_types", "must not be empty"));
        }
        self.gmm.parsed_cov_types()?;
        if self.gmm.max_iter == 0 {
            return Err(bad("gmm.max_iter", "must be at least 1"));
        }

        if self.pam.k_min > self.pam.k_max {
            return Err(bad("pam.k_min", "k_min must not exceed k_max"));
        }
        if !allow && (self.pam.k_min < 5 || self.pam.k_max > 20) {
            return Err(bad(
                "pam.k_min",
                "published k range is 5..=20 (set allow_out_of_range = true to override)",
            ));
        }
        if self.pam.inits == 0 {
            return Err(bad("pam.inits", "must be at least 1"));
        }
        if !allow && self.pam.inits > 5 {
            return Err(bad("pam.inits", "published value is 5 initializations"));
        }

        if self.analytics.nr_windows.is_empty() {
            return Err(bad("analytics.nr_windows", "must not be empty"));
        }
        if !allow {
            if let Some(x) = self.analytics.nr_windows.iter().find(|x| !(7..=30).contains(*x)) {
                return Err(bad(
                    "analytics.nr_windows",
                    format!("{x} is outside the published windows 7..=30"),
                ));
            }
        }

        if FeatureSet::parse(&self.predictor.feature_set).is_none() {
            return Err(bad(
                "predictor.feature_set",
                format!(
                    "unknown set `{}` (expected all, baseline, clustering, gmm, pam, gmm+baseline, or pam+baseline)",
                    self.predictor.feature_set
                ),
            ));
        }
        if self.predictor.stride == 0 {
            return Err(bad("predictor.stride", "must be at least 1"));
        }
        if self.predictor.random_trials == 0 {
            return Err(bad("predictor.random_trials", "must be at least 1"));
        }
        check_grid("predictor.n_bins", &self.predictor.n_bins, 2..=15, allow)?;
        check_grid("predictor.subset_size", &self.predictor.subset_size, 50..=300, allow)?;
        check_grid("predictor.n_features", &self.predictor.n_features, 3..=15, allow)?;
        Ok(())
    }

    pub fn feature_set(&self) -> FeatureSet {
        FeatureSet::parse(&self.predictor.feature_set).expect("validated at load")
    }
}
