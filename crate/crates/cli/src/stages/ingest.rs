//! `ingest` stage: read a cohort archive, bin observations into daily
//! templates, normalize per patient, and write the dataset artifact.

use std::path::PathBuf;

use routines_core::ingest::{files, load_cohort};
use routines_core::normalize::normalize_per_patient;
use routines_core::registry::ModalityRegistry;

use crate::artifacts::{self, DatasetArtifact, ARTIFACT_SCHEMA_VERSION};
use crate::error::Result;
use crate::stages::Ctx;

pub fn run(ctx: &Ctx) -> Result<()> {
    let cohort_dir: PathBuf = ctx
        .config
        .input
        .cohort_dir
        .clone()
        .unwrap_or_else(|| ctx.layout.cohort_dir());
    artifacts::require(&cohort_dir.join(files::OBSERVATIONS), "synth")?;

    let registry = match &ctx.config.run.registry {
        Some(path) => ModalityRegistry::load(path)?,
        None => ModalityRegistry::default_registry(),
    };

    let (mut cohort, report) = load_cohort(&cohort_dir, &registry)?;
    normalize_per_patient(&mut cohort);

    for warning in &report.warnings {
        log::warn!("ingest: {warning}");
    }
    if !report.rejected.is_empty() {
        log::warn!("ingest: rejected {} rows", report.rejected.len());
    }

    let artifact = DatasetArtifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        seed: ctx.seed,
        source: cohort_dir.display().to_string(),
        registry_toml: registry.to_toml_string(),
        ingest: report,
        cohort,
    };
    artifacts::write_json(&ctx.layout.dataset(), &artifact)?;
    log::info!(
        "ingest: {} patients, {} days -> {}",
        artifact.cohort.patients.len(),
        artifact.cohort.n_days(),
        ctx.layout.dataset().display()
    );
    Ok(())
}
