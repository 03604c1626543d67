//! `fit-pam` stage: cluster all daily templates around medoids under DTW,
//! selecting k by the elbow of the mean-cost curve.

use routines_core::pam::select_pam;
use routines_core::template::DailyTemplate;

use crate::artifacts::{self, DatasetArtifact, PamArtifact, ARTIFACT_SCHEMA_VERSION};
use crate::error::Result;
use crate::stages::{Ctx, SEED_PAM};

pub fn run(ctx: &Ctx) -> Result<()> {
    let dataset: DatasetArtifact = artifacts::read_json(&ctx.layout.dataset(), "ingest")?;
    let cohort = &dataset.cohort;

    let templates: Vec<DailyTemplate> = cohort
        .day_index()
        .iter()
        .map(|&(p, date)| cohort.patients[p].templates[&date].clone())
        .collect();
    log::info!("fit-pam: {} templates, computing pairwise alignment costs", templates.len());

    let pam_cfg = &ctx.config.pam;
    let selection = select_pam(
        &templates,
        pam_cfg.k_min..=pam_cfg.k_max,
        pam_cfg.inits,
        ctx.stage_seed(SEED_PAM),
    )?;
    log::info!(
        "fit-pam: selected k = {}{}",
        selection.chosen_k,
        if selection.min_cost_fallback { " (minimum-cost fallback)" } else { "" }
    );

    let artifact = PamArtifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        seed: ctx.seed,
        selection,
    };
    artifacts::write_json(&ctx.layout.pam(), &artifact)?;
    Ok(())
}
