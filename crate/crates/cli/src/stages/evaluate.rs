//! `evaluate` stage: leave-one-patient-out relapse prediction over 28-day
//! feature windows, plus a label-shuffling random baseline.

use serde::Serialize;

use routines_core::exec::derive_seed;
use routines_core::predictor::{
    lopo_evaluate, make_window_samples, random_baseline, FeatureSet, FeatureTable,
};
use routines_core::registry::ModalityRegistry;

use crate::artifacts::{
    self, DatasetArtifact, EvaluationArtifact, RandomBaseline, ARTIFACT_SCHEMA_VERSION,
};
use crate::error::Result;
use crate::stages::{analyze, Ctx, SEED_BASELINE, SEED_EVALUATE};

/// Command-line overrides of the configured predictor settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub feature_set: Option<FeatureSet>,
    pub no_personalization: bool,
}

#[derive(Serialize)]
struct FoldRow {
    patient_id: String,
    n_samples: usize,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    tn: usize,
    n_bins: usize,
    subset_size: usize,
    n_features: usize,
    inner_cv_f2: f64,
    subset_len: usize,
    n_trees: usize,
    selected_features: String,
}

#[derive(Serialize)]
struct FeatureRow<'a> {
    feature: &'a str,
    frequency: f64,
}

pub fn run(ctx: &Ctx, overrides: Overrides) -> Result<()> {
    let dataset: DatasetArtifact = artifacts::read_json(&ctx.layout.dataset(), "ingest")?;
    let cohort = &dataset.cohort;
    let registry = ModalityRegistry::from_toml_str(&dataset.registry_toml)?;
    let scores = analyze::load_aligned_scores(ctx, cohort)?;

    let predictor = &ctx.config.predictor;
    let set = overrides.feature_set.unwrap_or_else(|| ctx.config.feature_set());
    let personalize = !overrides.no_personalization && predictor.personalization;
    let grids = predictor.grids();

    let samples = make_window_samples(cohort, &registry, &scores, predictor.stride as usize);
    let table = FeatureTable::from_samples(&samples, set);
    log::info!(
        "evaluate[{set}]: {} windows ({} positive), {} features, personalization {}",
        table.rows.len(),
        table.labels.iter().filter(|&&l| l).count(),
        table.names.len(),
        if personalize { "on" } else { "off" }
    );

    let set_idx = FeatureSet::ALL_SETS.iter().position(|s| *s == set).unwrap() as u64;
    let report = lopo_evaluate(
        &table,
        set,
        personalize,
        &grids,
        derive_seed(ctx.seed, &[SEED_EVALUATE, set_idx]),
    )?;
    let (mean_f2, std_f2) =
        random_baseline(&table.labels, predictor.random_trials, ctx.stage_seed(SEED_BASELINE));
    log::info!(
        "evaluate[{set}]: precision {:.3}, recall {:.3}, F2 {:.3} (random {:.3} +/- {:.3})",
        report.precision,
        report.recall,
        report.f2,
        mean_f2,
        std_f2
    );

    let dir = ctx.layout.evaluation();
    let name = set.name();

    artifacts::write_csv(&dir.join(format!("{name}_predictions.csv")), &report.predictions)?;

    let fold_rows: Vec<FoldRow> = report
        .folds
        .iter()
        .map(|f| FoldRow {
            patient_id: f.patient_id.clone(),
            n_samples: f.n_samples,
            tp: f.tp,
            fp: f.fp,
            fn_: f.fn_,
            tn: f.tn,
            n_bins: f.params.n_bins,
            subset_size: f.params.subset_size,
            n_features: f.params.n_features,
            inner_cv_f2: f.params.mean_f2,
            subset_len: f.subset_len,
            n_trees: f.bootstrap_counts.len(),
            selected_features: f.selected_features.join("|"),
        })
        .collect();
    artifacts::write_csv(&dir.join(format!("{name}_folds.csv")), &fold_rows)?;

    let mut feature_rows: Vec<FeatureRow> = report
        .feature_frequency
        .iter()
        .map(|(feature, &frequency)| FeatureRow { feature, frequency })
        .collect();
    feature_rows.sort_by(|a, b| {
        b.frequency.partial_cmp(&a.frequency).unwrap().then(a.feature.cmp(b.feature))
    });
    artifacts::write_csv(&dir.join(format!("{name}_features.csv")), &feature_rows)?;

    let artifact = EvaluationArtifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        seed: ctx.seed,
        stride: predictor.stride,
        grids,
        random_baseline: RandomBaseline {
            trials: predictor.random_trials,
            mean_f2,
            std_f2,
        },
        report,
    };
    artifacts::write_json(&dir.join(format!("{name}.json")), &artifact)?;
    Ok(())
}
