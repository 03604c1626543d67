//! On-disk stage artifacts: names, schemas, and IO helpers.
//!
//! Every JSON artifact starts with `schema_version` and the seed that
//! produced it. Stages communicate only through these files, so re-running
//! any stage with identical inputs rewrites its outputs byte-exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use routines_core::gmm::{GmmModel, GmmSelectionReport};
use routines_core::ingest::IngestReport;
use routines_core::pam::PamSelection;
use routines_core::pca::PcaModel;
use routines_core::predictor::{EvaluationReport, Grids};
use routines_core::scoring::ScoreRow;
use routines_core::template::Cohort;
use routines_core::{gmm::GmmDayScores, pam::PamDayScores};

use crate::error::{CliError, Result};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

pub const COHORT_DIR: &str = "cohort";
pub const DATASET: &str = "dataset.json";
pub const GMM_MODEL: &str = "gmm.json";
pub const PAM_MODEL: &str = "pam.json";
pub const SCORES: &str = "scores.csv";
pub const ANALYTICS_DIR: &str = "analytics";
pub const EVALUATION_DIR: &str = "evaluation";
pub const REPORT_DIR: &str = "report";
pub const MANIFEST: &str = "manifest.json";

/// Normalized cohort plus everything needed to reproduce downstream stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetArtifact {
    pub schema_version: u32,
    pub seed: u64,
    /// Cohort archive directory as configured (verbatim, not canonicalized).
    pub source: String,
    /// Registry the observations were binned with, in registry TOML form.
    pub registry_toml: String,
    pub ingest: IngestReport,
    pub cohort: Cohort,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmArtifact {
    pub schema_version: u32,
    pub seed: u64,
    pub pca: PcaModel,
    pub selection: GmmSelectionReport,
    pub model: GmmModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PamArtifact {
    pub schema_version: u32,
    pub seed: u64,
    pub selection: PamSelection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub trials: usize,
    pub mean_f2: f64,
    pub std_f2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationArtifact {
    pub schema_version: u32,
    pub seed: u64,
    pub stride: u32,
    pub grids: Grids,
    pub random_baseline: RandomBaseline,
    pub report: EvaluationReport,
}

/// One flat line of scores.csv; `None` serializes as an empty cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresCsvRow {
    pub patient_id: String,
    pub date: chrono::NaiveDate,
    pub gmm_label: Option<usize>,
    pub gmm_assigned_likelihood: Option<f64>,
    pub gmm_weighted_likelihood: Option<f64>,
    pub pam_label: Option<usize>,
    pub pam_assigned_distance: Option<f64>,
    pub pam_weighted_distance: Option<f64>,
    pub pam_dtw_prev_day: Option<f64>,
}

impl From<&ScoreRow> for ScoresCsvRow {
    fn from(row: &ScoreRow) -> Self {
        ScoresCsvRow {
            patient_id: row.patient_id.clone(),
            date: row.date,
            gmm_label: row.gmm.as_ref().map(|g| g.label),
            gmm_assigned_likelihood: row.gmm.as_ref().map(|g| g.assigned_likelihood),
            gmm_weighted_likelihood: row.gmm.as_ref().map(|g| g.weighted_likelihood),
            pam_label: row.pam.as_ref().map(|p| p.label),
            pam_assigned_distance: row.pam.as_ref().map(|p| p.assigned_distance),
            pam_weighted_distance: row.pam.as_ref().map(|p| p.weighted_distance),
            pam_dtw_prev_day: row.pam.as_ref().and_then(|p| p.dtw_prev_day),
        }
    }
}

impl From<ScoresCsvRow> for ScoreRow {
    fn from(row: ScoresCsvRow) -> Self {
        let gmm = row.gmm_label.map(|label| GmmDayScores {
            label,
            assigned_likelihood: row.gmm_assigned_likelihood.expect("gmm cells travel together"),
            weighted_likelihood: row.gmm_weighted_likelihood.expect("gmm cells travel together"),
        });
        let pam = row.pam_label.map(|label| PamDayScores {
            label,
            assigned_distance: row.pam_assigned_distance.expect("pam cells travel together"),
            weighted_distance: row.pam_weighted_distance.expect("pam cells travel together"),
            dtw_prev_day: row.pam_dtw_prev_day,
        });
        ScoreRow { patient_id: row.patient_id, date: row.date, gmm, pam }
    }
}

/// CSV row schemas shared between the `analyze` and `report` stages.
pub mod rows {
    use chrono::NaiveDate;
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ClusterRow {
        pub label: usize,
        pub size: usize,
        pub covariance_trace: f64,
        pub mean_assigned_score: f64,
        pub mean_weighted_score: f64,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ProfileRow {
        pub label: usize,
        pub modality: String,
        pub hour: usize,
        pub mean: f64,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct NrEventRow {
        pub score: String,
        pub x: u32,
        pub patient_id: String,
        pub relapse: NaiveDate,
        pub delta: f64,
        pub n_nr: usize,
        pub n_pre: usize,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct NrSummaryRow {
        pub score: String,
        pub x: u32,
        pub n_events: usize,
        pub skipped_events: usize,
        pub mean_delta: f64,
        pub pooled_delta: f64,
        pub non_negligible: bool,
        pub crosscheck_reference: Option<f64>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct NrSampleRow {
        pub score: String,
        pub x: u32,
        pub patient_id: String,
        pub relapse: NaiveDate,
        pub group: String,
        pub value: f64,
    }
}

/// Report manifest: every emitted file with size, content hash, and which
/// of the six report categories it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    /// Digest of the pipeline-relevant config sections (paths excluded).
    pub config_sha256: String,
    pub files: BTreeMap<String, FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub bytes: u64,
    pub sha256: String,
    pub category: String,
}

/// Errors with a pointer at the producing stage when `path` is absent.
pub fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            artifact: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            stage: stage.into(),
        })
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path, produced_by: &str) -> Result<T> {
    require(path, produced_by)?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Message(format!("{}: corrupt artifact: {e}", path.display()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Message(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path, produced_by: &str) -> Result<Vec<T>> {
    require(path, produced_by)?;
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok((bytes.len() as u64, format!("{:x}", hasher.finalize())))
}

pub fn sha256_str(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    format!("{:x}", hasher.finalize())
}

/// Standard artifact locations under the output directory.
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: &Path) -> Self {
        Layout { out: out.to_path_buf() }
    }

    pub fn cohort_dir(&self) -> PathBuf {
        self.out.join(COHORT_DIR)
    }

    pub fn dataset(&self) -> PathBuf {
        self.out.join(DATASET)
    }

    pub fn gmm(&self) -> PathBuf {
        self.out.join(GMM_MODEL)
    }

    pub fn pam(&self) -> PathBuf {
        self.out.join(PAM_MODEL)
    }

    pub fn scores(&self) -> PathBuf {
        self.out.join(SCORES)
    }

    pub fn analytics(&self) -> PathBuf {
        self.out.join(ANALYTICS_DIR)
    }

    pub fn evaluation(&self) -> PathBuf {
        self.out.join(EVALUATION_DIR)
    }

    pub fn report(&self) -> PathBuf {
        self.out.join(REPORT_DIR)
    }
}
