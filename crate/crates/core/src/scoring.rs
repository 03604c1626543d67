//! Embeds daily templates and scores every patient-day against the fitted
//! cluster models.
//!
//! Rows always come out in the canonical batch order (patients by id, dates
//! ascending), and each day is scored independently, so batches are safe to
//! compute in parallel without changing a byte of the output.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::gmm::{GmmDayScores, GmmModel};
use crate::pam::{score_day_pam, PamDayScores, PamModel};
use crate::pca::PcaModel;
use crate::template::Cohort;
use crate::{Error, Result};

/// One day projected into the PCA space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedDay {
    pub patient_id: String,
    pub date: NaiveDate,
    pub coords: Vec<f64>,
}

/// Per-day scores from whichever models were supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub patient_id: String,
    pub date: NaiveDate,
    pub gmm: Option<GmmDayScores>,
    pub pam: Option<PamDayScores>,
}

/// Projects every patient-day in canonical batch order.
pub fn embed_cohort(cohort: &Cohort, pca: &PcaModel) -> Vec<EmbeddedDay> {
    let index = cohort.day_index();
    exec::map_slice(&index, |&(p, date)| {
        let patient = &cohort.patients[p];
        EmbeddedDay {
            patient_id: patient.patient_id.clone(),
            date,
            coords: crate::pca::project(pca, &patient.templates[&date].flatten()),
        }
    })
}

/// Scores every patient-day with the supplied models.
///
/// GMM scoring needs `pca` to embed each day first; PAM scoring runs on the
/// templates directly and compares each day with the previous calendar
/// day's template when one exists.
pub fn score_cohort(
    cohort: &Cohort,
    pca: Option<&PcaModel>,
    gmm: Option<&GmmModel>,
    pam: Option<&PamModel>,
) -> Result<Vec<ScoreRow>> {
    if gmm.is_some() && pca.is_none() {
        return Err(Error::InvalidArgument(
            "gmm scoring requires the pca model that produced its training embedding".into(),
        ));
    }
    let gmm_scorer = gmm.map(|m| m.scorer()).transpose()?;
    let index = cohort.day_index();
    let rows = exec::map_slice(&index, |&(p, date)| {
        let patient = &cohort.patients[p];
        let template = &patient.templates[&date];
        let gmm_scores = gmm_scorer.as_ref().map(|scorer| {
            let coords = crate::pca::project(pca.expect("checked above"), &template.flatten());
            scorer.score_day(&coords)
        });
        let pam_scores = pam.map(|model| {
            let prev = date
                .pred_opt()
                .and_then(|yesterday| patient.templates.get(&yesterday));
            score_day_pam(model, template, prev)
        });
        ScoreRow {
            patient_id: patient.patient_id.clone(),
            date,
            gmm: gmm_scores,
            pam: pam_scores,
        }
    });
    Ok(rows)
}
