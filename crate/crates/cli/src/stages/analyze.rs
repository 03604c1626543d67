//! `analyze` stage: cluster summaries, mean hourly profiles, and
//! near-relapse effect sizes, written as flat CSV tables.

use chrono::NaiveDate;

use routines_core::analytics::{
    cluster_summaries, effect_report, partition_near_relapse, ScoreKind,
    CLIFFS_DELTA_THRESHOLD, CROSSCHECK_REFERENCE_DELTAS,
};
use routines_core::registry::ModalityRegistry;
use routines_core::scoring::{embed_cohort, ScoreRow};
use routines_core::template::{Cohort, DailyTemplate};

use crate::artifacts::rows::{ClusterRow, NrEventRow, NrSampleRow, NrSummaryRow, ProfileRow};
use crate::artifacts::{self, DatasetArtifact, GmmArtifact, ScoresCsvRow};
use crate::error::{CliError, Result};
use crate::stages::Ctx;

/// Loads scores.csv and checks it still lines up with the dataset's
/// patient-day index.
pub fn load_aligned_scores(ctx: &Ctx, cohort: &Cohort) -> Result<Vec<ScoreRow>> {
    let csv_rows: Vec<ScoresCsvRow> = artifacts::read_csv(&ctx.layout.scores(), "score")?;
    let index = cohort.day_index();
    let aligned = csv_rows.len() == index.len()
        && csv_rows.iter().zip(&index).all(|(row, &(p, date))| {
            row.patient_id == cohort.patients[p].patient_id && row.date == date
        });
    if !aligned {
        return Err(CliError::Message(
            "scores.csv does not match the dataset's patient-day index; re-run the `score` stage"
                .into(),
        ));
    }
    Ok(csv_rows.into_iter().map(ScoreRow::from).collect())
}

#[allow(clippy::too_many_arguments)]
fn summaries_csv(
    dir: &std::path::Path,
    stem: &str,
    registry: &ModalityRegistry,
    assignments: &[usize],
    trace_points: &[Vec<f64>],
    templates: &[&DailyTemplate],
    assigned: &[f64],
    weighted: &[f64],
) -> Result<()> {
    let summaries = cluster_summaries(assignments, trace_points, templates, assigned, weighted);
    let cluster_rows: Vec<ClusterRow> = summaries
        .iter()
        .map(|s| ClusterRow {
            label: s.label,
            size: s.size,
            covariance_trace: s.covariance_trace,
            mean_assigned_score: s.mean_assigned_score,
            mean_weighted_score: s.mean_weighted_score,
        })
        .collect();
    artifacts::write_csv(&dir.join(format!("{stem}_clusters.csv")), &cluster_rows)?;

    let mut profile_rows = Vec::new();
    for s in &summaries {
        for (m, hours) in s.mean_template.iter().enumerate() {
            for (h, &mean) in hours.iter().enumerate() {
                profile_rows.push(ProfileRow {
                    label: s.label,
                    modality: registry.name(m).to_string(),
                    hour: h,
                    mean,
                });
            }
        }
    }
    artifacts::write_csv(&dir.join(format!("{stem}_profiles.csv")), &profile_rows)?;
    Ok(())
}

pub fn run(ctx: &Ctx) -> Result<()> {
    let dataset: DatasetArtifact = artifacts::read_json(&ctx.layout.dataset(), "ingest")?;
    let gmm: GmmArtifact = artifacts::read_json(&ctx.layout.gmm(), "fit-gmm")?;
    let cohort = &dataset.cohort;
    let registry = ModalityRegistry::from_toml_str(&dataset.registry_toml)?;
    let scores = load_aligned_scores(ctx, cohort)?;

    let index = cohort.day_index();
    let templates: Vec<&DailyTemplate> =
        index.iter().map(|&(p, date)| &cohort.patients[p].templates[&date]).collect();
    let dir = ctx.layout.analytics();

    // GMM clusters: spread measured in the PCA embedding the mixture was
    // fitted in.
    let embedded = embed_cohort(cohort, &gmm.pca);
    let coords: Vec<Vec<f64>> = embedded.into_iter().map(|e| e.coords).collect();
    let gmm_scores: Option<Vec<_>> = scores.iter().map(|r| r.gmm.clone()).collect();
    let Some(gmm_scores) = gmm_scores else {
        return Err(CliError::Message(
            "scores.csv has rows without mixture scores; re-run the `score` stage".into(),
        ));
    };
    summaries_csv(
        &dir,
        "gmm",
        &registry,
        &gmm_scores.iter().map(|g| g.label).collect::<Vec<_>>(),
        &coords,
        &templates,
        &gmm_scores.iter().map(|g| g.assigned_likelihood).collect::<Vec<_>>(),
        &gmm_scores.iter().map(|g| g.weighted_likelihood).collect::<Vec<_>>(),
    )?;

    // PAM clusters: spread measured on the flattened templates themselves,
    // the space its alignment costs live closest to.
    let flat: Vec<Vec<f64>> = templates.iter().map(|t| t.flatten()).collect();
    let pam_scores: Option<Vec<_>> = scores.iter().map(|r| r.pam.clone()).collect();
    let Some(pam_scores) = pam_scores else {
        return Err(CliError::Message(
            "scores.csv has rows without medoid scores; re-run the `score` stage".into(),
        ));
    };
    summaries_csv(
        &dir,
        "pam",
        &registry,
        &pam_scores.iter().map(|p| p.label).collect::<Vec<_>>(),
        &flat,
        &templates,
        &pam_scores.iter().map(|p| p.assigned_distance).collect::<Vec<_>>(),
        &pam_scores.iter().map(|p| p.weighted_distance).collect::<Vec<_>>(),
    )?;

    // Near-relapse effect sizes.
    let xs = &ctx.config.analytics.nr_windows;
    let report = effect_report(cohort, &scores, xs, CLIFFS_DELTA_THRESHOLD);
    let mut event_rows = Vec::new();
    let mut summary_rows = Vec::new();
    for entry in &report.entries {
        for d in &entry.deltas {
            event_rows.push(NrEventRow {
                score: entry.score.name().to_string(),
                x: entry.x,
                patient_id: d.patient_id.clone(),
                relapse: d.relapse,
                delta: d.delta,
                n_nr: d.n_nr,
                n_pre: d.n_pre,
            });
        }
        let reference = CROSSCHECK_REFERENCE_DELTAS
            .iter()
            .find(|(kind, x, _)| *kind == entry.score && *x == entry.x)
            .map(|&(_, _, delta)| delta);
        summary_rows.push(NrSummaryRow {
            score: entry.score.name().to_string(),
            x: entry.x,
            n_events: entry.deltas.len(),
            skipped_events: entry.skipped_events,
            mean_delta: entry.mean_delta,
            pooled_delta: entry.pooled_delta,
            non_negligible: entry.non_negligible,
            crosscheck_reference: reference,
        });
    }
    artifacts::write_csv(&dir.join("nr_event_deltas.csv"), &event_rows)?;
    artifacts::write_csv(&dir.join("nr_summary.csv"), &summary_rows)?;

    // Raw per-day samples behind each delta, for the report's boxplots.
    let by_day: std::collections::BTreeMap<(&str, NaiveDate), &ScoreRow> =
        scores.iter().map(|r| ((r.patient_id.as_str(), r.date), r)).collect();
    let mut sample_rows = Vec::new();
    for kind in ScoreKind::ALL {
        for &x in xs {
            for patient in &cohort.patients {
                let observed: Vec<NaiveDate> = patient.templates.keys().copied().collect();
                for part in partition_near_relapse(&observed, &patient.relapse_events, x) {
                    let mut push = |days: &[NaiveDate], group: &str| {
                        for d in days {
                            let row = by_day.get(&(patient.patient_id.as_str(), *d));
                            if let Some(value) = row.and_then(|r| kind.extract(r)) {
                                sample_rows.push(NrSampleRow {
                                    score: kind.name().to_string(),
                                    x,
                                    patient_id: patient.patient_id.clone(),
                                    relapse: part.relapse,
                                    group: group.to_string(),
                                    value,
                                });
                            }
                        }
                    };
                    push(&part.nr_days, "nr");
                    push(&part.pre_nr_days, "pre");
                }
            }
        }
    }
    artifacts::write_csv(&dir.join("nr_samples.csv"), &sample_rows)?;

    log::info!(
        "analyze: {} effect entries, {} event deltas -> {}",
        report.entries.len(),
        event_rows.len(),
        dir.display()
    );
    Ok(())
}
