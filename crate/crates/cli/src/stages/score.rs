//! `score` stage: daily routine scores for every patient-day from the
//! fitted mixture and medoid models.

use routines_core::scoring::score_cohort;

use crate::artifacts::{self, DatasetArtifact, GmmArtifact, PamArtifact, ScoresCsvRow};
use crate::error::Result;
use crate::stages::Ctx;

pub fn run(ctx: &Ctx) -> Result<()> {
    let dataset: DatasetArtifact = artifacts::read_json(&ctx.layout.dataset(), "ingest")?;
    let gmm: GmmArtifact = artifacts::read_json(&ctx.layout.gmm(), "fit-gmm")?;
    let pam: PamArtifact = artifacts::read_json(&ctx.layout.pam(), "fit-pam")?;

    let rows = score_cohort(
        &dataset.cohort,
        Some(&gmm.pca),
        Some(&gmm.model),
        Some(&pam.selection.model),
    )?;

    let csv_rows: Vec<ScoresCsvRow> = rows.iter().map(ScoresCsvRow::from).collect();
    artifacts::write_csv(&ctx.layout.scores(), &csv_rows)?;
    log::info!("score: wrote {} rows to {}", csv_rows.len(), ctx.layout.scores().display());
    Ok(())
}
