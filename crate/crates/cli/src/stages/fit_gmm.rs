//! `fit-gmm` stage: embed all daily templates with PCA, then select a
//! Gaussian mixture over the configured (k, covariance) grid.

use routines_core::gmm::{select_gmm, EmOptions};
use routines_core::pca::{fit_pca, project, PcaModel};

use crate::artifacts::{self, DatasetArtifact, GmmArtifact, ARTIFACT_SCHEMA_VERSION};
use crate::error::Result;
use crate::stages::{Ctx, SEED_GMM};

/// Drops trailing components once `fraction` of the total variance is
/// covered. Exact: PCA component q never depends on components past q.
fn truncate_to_variance(mut pca: PcaModel, fraction: f64) -> PcaModel {
    let mut cum = 0.0;
    let mut keep = pca.components.len();
    for (i, ratio) in pca.explained_variance_ratio.iter().enumerate() {
        cum += ratio;
        if cum >= fraction {
            keep = i + 1;
            break;
        }
    }
    pca.components.truncate(keep);
    pca.explained_variance.truncate(keep);
    pca.explained_variance_ratio.truncate(keep);
    pca
}

pub fn run(ctx: &Ctx) -> Result<()> {
    let dataset: DatasetArtifact = artifacts::read_json(&ctx.layout.dataset(), "ingest")?;
    let cohort = &dataset.cohort;

    let flat: Vec<Vec<f64>> = cohort
        .day_index()
        .iter()
        .map(|&(p, date)| cohort.patients[p].templates[&date].flatten())
        .collect();

    let pca = match ctx.config.pca.components {
        Some(q) => fit_pca(&flat, Some(q))?,
        None => truncate_to_variance(fit_pca(&flat, None)?, ctx.config.pca.variance_fraction),
    };
    log::info!(
        "fit-gmm: pca kept {} components ({:.1}% of variance)",
        pca.n_components(),
        pca.explained_variance_ratio.iter().sum::<f64>() * 100.0
    );

    let embedded: Vec<Vec<f64>> = flat.iter().map(|row| project(&pca, row)).collect();

    let gmm_cfg = &ctx.config.gmm;
    let ks: Vec<usize> = (gmm_cfg.k_min..=gmm_cfg.k_max).collect();
    let cov_types = gmm_cfg.parsed_cov_types()?;
    let opts = EmOptions { max_iter: gmm_cfg.max_iter, ..EmOptions::default() };
    let (model, selection) = select_gmm(
        &embedded,
        &ks,
        &cov_types,
        gmm_cfg.restarts,
        ctx.stage_seed(SEED_GMM),
        &opts,
    )?;
    log::info!(
        "fit-gmm: selected k = {}, covariance = {}",
        selection.chosen_k,
        selection.chosen_cov
    );

    let artifact = GmmArtifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        seed: ctx.seed,
        pca,
        selection,
        model,
    };
    artifacts::write_json(&ctx.layout.gmm(), &artifact)?;
    Ok(())
}
