//! Personalized training, hyperparameter tuning, and leave-one-patient-out
//! evaluation of the balanced random forest.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::exec;
use crate::Result;

use super::brf::{fit_brf, predict_proba, DEFAULT_N_TREES};
use super::quantize::{fit_quantizer, quantize};
use super::{FeatureSet, FeatureTable, Grids};

const INNER_CV_FOLDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f2: f64,
}

/// Confusion-count metrics; every degenerate denominator reads 0 so empty
/// prediction sets cannot inflate a score.
pub fn metrics(tp: usize, fp: usize, fn_: usize) -> Metrics {
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    Metrics { precision, recall, f2: f2_from_pr(precision, recall) }
}

/// F2 = 5pr / (4p + r), the recall-weighted F-measure; 0 when degenerate.
pub fn f2_from_pr(precision: f64, recall: f64) -> f64 {
    let denom = 4.0 * precision + recall;
    if denom > 0.0 {
        5.0 * precision * recall / denom
    } else {
        0.0
    }
}

/// Ranks the pool's patients by |age - test_age| (ties by patient id), takes
/// whole patients until `subset_size` samples accumulate, then unions every
/// positive-labeled pool sample. Returns sorted row indices.
pub fn personalization_subset(
    table: &FeatureTable,
    pool: &[usize],
    test_age: f64,
    subset_size: usize,
) -> Vec<usize> {
    assert!(subset_size >= 1, "subset_size must be positive");
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in pool {
        groups.entry(table.patient_ids[i].as_str()).or_default().push(i);
    }
    let mut ranked: Vec<(&str, &Vec<usize>)> = groups.iter().map(|(k, v)| (*k, v)).collect();
    ranked.sort_by(|a, b| {
        let da = (table.ages[a.1[0]] - test_age).abs();
        let db = (table.ages[b.1[0]] - test_age).abs();
        da.partial_cmp(&db).unwrap().then_with(|| a.0.cmp(b.0))
    });

    let mut subset: BTreeSet<usize> = BTreeSet::new();
    for (_, rows) in &ranked {
        if subset.len() >= subset_size {
            break;
        }
        subset.extend(rows.iter().copied());
    }
    subset.extend(pool.iter().copied().filter(|&i| table.labels[i]));
    subset.into_iter().collect()
}

/// Ranks feature columns by absolute Pearson correlation with the label over
/// `subset` and returns the top `n_features` column indices in rank order.
/// Constant columns correlate 0; ties prefer the lexicographically smaller
/// feature name (equivalently the smaller column, names being sorted).
pub fn select_features(
    table: &FeatureTable,
    subset: &[usize],
    n_features: usize,
) -> Result<Vec<usize>> {
    let n = subset.len() as f64;
    let pos = subset.iter().filter(|&&i| table.labels[i]).count();
    if pos == 0 || pos == subset.len() {
        return Err(Error::SingleClass);
    }
    let y_mean = pos as f64 / n;
    let y_var: f64 = subset
        .iter()
        .map(|&i| (table.labels[i] as u8 as f64 - y_mean).powi(2))
        .sum::<f64>()
        / n;

    let mut scored: Vec<(f64, usize)> = (0..table.names.len())
        .map(|c| {
            let x_mean = subset.iter().map(|&i| table.rows[i][c]).sum::<f64>() / n;
            let mut x_var = 0.0;
            let mut cov = 0.0;
            for &i in subset {
                let dx = table.rows[i][c] - x_mean;
                x_var += dx * dx;
                cov += dx * (table.labels[i] as u8 as f64 - y_mean);
            }
            x_var /= n;
            cov /= n;
            let r = if x_var > 0.0 { cov / (x_var * y_var).sqrt() } else { 0.0 };
            (r.abs(), c)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    scored.truncate(n_features.min(table.names.len()));
    Ok(scored.into_iter().map(|(_, c)| c).collect())
}

/// Hyperparameters chosen by the inner cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunedParams {
    pub n_bins: usize,
    pub subset_size: usize,
    pub n_features: usize,
    pub mean_f2: f64,
}

/// Everything one trained fold produces for its held-out rows.
struct FoldFit {
    probabilities: Vec<f64>,
    selected: Vec<usize>,
    subset_len: usize,
    subset_rows: Vec<usize>,
    bootstrap_counts: Vec<(usize, usize)>,
}

/// Personalize (optionally), select features, quantize, fit the forest on
/// `pool`, and score `predict_idx`. Errors when the effective training
/// subset degenerates to one class or zero usable features.
fn fit_and_predict(
    table: &FeatureTable,
    pool: &[usize],
    predict_idx: &[usize],
    test_age: f64,
    personalize: bool,
    n_bins: usize,
    subset_size: usize,
    n_features: usize,
    seed: u64,
) -> Result<FoldFit> {
    let subset = if personalize {
        personalization_subset(table, pool, test_age, subset_size)
    } else {
        pool.to_vec()
    };
    let selected = select_features(table, &subset, n_features)?;
    let names: Vec<String> = selected.iter().map(|&c| table.names[c].clone()).collect();
    let raw: Vec<Vec<f64>> = subset
        .iter()
        .map(|&i| selected.iter().map(|&c| table.rows[i][c]).collect())
        .collect();
    let spec = fit_quantizer(&names, &raw, n_bins);
    if spec.expanded_len() == 0 {
        return Err(Error::InvalidArgument(
            "all selected features are constant over the training subset".into(),
        ));
    }
    let train_rows: Vec<Vec<f64>> = raw.iter().map(|r| quantize(&spec, r)).collect();
    for row in &train_rows {
        for f in 0..spec.kept.len() {
            let block: f64 = row[f * spec.n_bins..(f + 1) * spec.n_bins].iter().sum();
            assert_eq!(block, 1.0, "quantized block must be one-hot");
        }
    }
    let labels: Vec<bool> = subset.iter().map(|&i| table.labels[i]).collect();
    let model = fit_brf(&train_rows, &labels, DEFAULT_N_TREES, seed)?;
    let probabilities = predict_idx
        .iter()
        .map(|&i| {
            let raw: Vec<f64> = selected.iter().map(|&c| table.rows[i][c]).collect();
            predict_proba(&model, &quantize(&spec, &raw))
        })
        .collect();
    Ok(FoldFit {
        probabilities,
        selected,
        subset_len: subset.len(),
        subset_rows: subset,
        bootstrap_counts: model.bootstrap_counts,
    })
}

/// Random 10-fold cross-validation over the training rows: every grid point
/// is scored by mean fold F2 (single-class folds skipped) and the best wins;
/// exact ties prefer fewer selected features, then fewer bins, then a
/// smaller personalization subset.
pub fn tune_hyperparameters(
    table: &FeatureTable,
    train_idx: &[usize],
    test_age: f64,
    personalize: bool,
    grids: &Grids,
    seed: u64,
) -> Result<TunedParams> {
    assert!(
        !grids.n_bins.is_empty() && !grids.subset_size.is_empty() && !grids.n_features.is_empty(),
        "empty hyperparameter grid"
    );
    let mut bins_grid = grids.n_bins.clone();
    bins_grid.sort_unstable();
    bins_grid.dedup();
    let mut subset_grid = grids.subset_size.clone();
    subset_grid.sort_unstable();
    subset_grid.dedup();
    let mut nfeat_grid = grids.n_features.clone();
    nfeat_grid.sort_unstable();
    nfeat_grid.dedup();

    let mut shuffled = train_idx.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(seed, &[0]));
    shuffled.shuffle(&mut rng);
    let k = INNER_CV_FOLDS.min(shuffled.len());
    let folds: Vec<&[usize]> = chunk_evenly(&shuffled, k);

    let mut best: Option<TunedParams> = None;
    for &n_features in &nfeat_grid {
        for &n_bins in &bins_grid {
            for &subset_size in &subset_grid {
                let mut f2_sum = 0.0;
                let mut evaluated = 0usize;
                for (f, fold) in folds.iter().enumerate() {
                    let inner_train: Vec<usize> = folds
                        .iter()
                        .enumerate()
                        .filter(|&(g, _)| g != f)
                        .flat_map(|(_, rows)| rows.iter().copied())
                        .collect();
                    let fold_pos = fold.iter().filter(|&&i| table.labels[i]).count();
                    if fold_pos == 0 || fold_pos == fold.len() {
                        continue; // single-class fold: no informative F2
                    }
                    let fit_seed = exec::derive_seed(
                        seed,
                        &[1, f as u64, n_bins as u64, subset_size as u64, n_features as u64],
                    );
                    let Ok(fit) = fit_and_predict(
                        table,
                        &inner_train,
                        fold,
                        test_age,
                        personalize,
                        n_bins,
                        subset_size,
                        n_features,
                        fit_seed,
                    ) else {
                        continue;
                    };
                    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
                    for (&i, &p) in fold.iter().zip(&fit.probabilities) {
                        match (p >= 0.5, table.labels[i]) {
                            (true, true) => tp += 1,
                            (true, false) => fp += 1,
                            (false, true) => fn_ += 1,
                            (false, false) => {}
                        }
                    }
                    f2_sum += metrics(tp, fp, fn_).f2;
                    evaluated += 1;
                }
                if evaluated == 0 {
                    continue;
                }
                let mean_f2 = f2_sum / evaluated as f64;
                if best.is_none_or(|b| mean_f2 > b.mean_f2) {
                    best = Some(TunedParams { n_bins, subset_size, n_features, mean_f2 });
                }
            }
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no grid point produced a scorable fold".into()))
}

fn chunk_evenly(rows: &[usize], k: usize) -> Vec<&[usize]> {
    let mut out = Vec::with_capacity(k);
    let (base, extra) = (rows.len() / k, rows.len() % k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(&rows[start..start + len]);
        start += len;
    }
    out
}

/// One evaluated leave-one-patient-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub patient_id: String,
    pub n_samples: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub params: TunedParams,
    pub selected_features: Vec<String>,
    pub subset_len: usize,
    pub bootstrap_counts: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub patient_id: String,
    pub window_end: NaiveDate,
    pub probability: f64,
    pub label: bool,
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub feature_set: String,
    pub personalization: bool,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f2: f64,
    pub folds: Vec<FoldOutcome>,
    /// Fraction of evaluated folds that selected each feature.
    pub feature_frequency: BTreeMap<String, f64>,
    pub predictions: Vec<PredictionRow>,
    /// Patients whose fold could not be trained (e.g. the training remainder
    /// lost its only positive patient).
    pub skipped_patients: Vec<String>,
}

/// Leave-one-patient-out evaluation: per held-out patient, tune on the rest,
/// personalize toward the held-out age, select features, quantize, fit the
/// forest, and score the patient's samples. Folds run independently with
/// per-fold seeds, so results do not depend on execution order.
pub fn lopo_evaluate(
    table: &FeatureTable,
    feature_set: FeatureSet,
    personalize: bool,
    grids: &Grids,
    seed: u64,
) -> Result<EvaluationReport> {
    let patients = table.patients();
    if patients.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-patient-out needs at least 3 patients, got {}",
            patients.len()
        )));
    }
    if !table.labels.iter().any(|&l| l) {
        return Err(Error::SingleClass);
    }

    enum FoldResult {
        Done(Box<FoldOutcome>, Vec<PredictionRow>),
        Skipped(String),
    }

    let results = exec::map_indices(patients.len(), |fold_i| {
        let (pid, test_rows) = &patients[fold_i];
        let train: Vec<usize> = patients
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != fold_i)
            .flat_map(|(_, (_, rows))| rows.iter().copied())
            .collect();
        let test_age = table.ages[test_rows[0]];
        let fold_seed = exec::derive_seed(seed, &[fold_i as u64]);

        let tuned = match tune_hyperparameters(
            table,
            &train,
            test_age,
            personalize,
            grids,
            exec::derive_seed(fold_seed, &[0]),
        ) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("fold {pid}: tuning failed ({e}); fold skipped");
                return FoldResult::Skipped(pid.clone());
            }
        };
        let fit = match fit_and_predict(
            table,
            &train,
            test_rows,
            test_age,
            personalize,
            tuned.n_bins,
            tuned.subset_size,
            tuned.n_features,
            exec::derive_seed(fold_seed, &[1]),
        ) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("fold {pid}: training failed ({e}); fold skipped");
                return FoldResult::Skipped(pid.clone());
            }
        };

        // Leakage guard: the held-out rows appear in neither the training
        // pool nor the personalization subset the quantizer/forest saw.
        let test_set: BTreeSet<usize> = test_rows.iter().copied().collect();
        assert!(train.iter().all(|i| !test_set.contains(i)));
        assert!(fit.subset_rows.iter().all(|i| !test_set.contains(i)));
        let train_set: BTreeSet<usize> = train.iter().copied().collect();
        assert!(fit.subset_rows.iter().all(|i| train_set.contains(i)));

        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        let mut predictions = Vec::with_capacity(test_rows.len());
        for (&i, &p) in test_rows.iter().zip(&fit.probabilities) {
            let predicted = p >= 0.5;
            match (predicted, table.labels[i]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
            predictions.push(PredictionRow {
                patient_id: pid.clone(),
                window_end: table.window_ends[i],
                probability: p,
                label: table.labels[i],
                predicted,
            });
        }
        let outcome = FoldOutcome {
            patient_id: pid.clone(),
            n_samples: test_rows.len(),
            tp,
            fp,
            fn_,
            tn,
            params: tuned,
            selected_features: fit.selected.iter().map(|&c| table.names[c].clone()).collect(),
            subset_len: fit.subset_len,
            bootstrap_counts: fit.bootstrap_counts,
        };
        FoldResult::Done(Box::new(outcome), predictions)
    });

    let mut folds = Vec::new();
    let mut predictions = Vec::new();
    let mut skipped_patients = Vec::new();
    for r in results {
        match r {
            FoldResult::Done(outcome, rows) => {
                folds.push(*outcome);
                predictions.extend(rows);
            }
            FoldResult::Skipped(pid) => skipped_patients.push(pid),
        }
    }
    if folds.is_empty() {
        return Err(Error::InvalidArgument("every fold was skipped".into()));
    }

    let tp: usize = folds.iter().map(|f| f.tp).sum();
    let fp: usize = folds.iter().map(|f| f.fp).sum();
    let fn_: usize = folds.iter().map(|f| f.fn_).sum();
    let tn: usize = folds.iter().map(|f| f.tn).sum();
    let m = metrics(tp, fp, fn_);

    let mut feature_frequency: BTreeMap<String, f64> = BTreeMap::new();
    for fold in &folds {
        for name in &fold.selected_features {
            *feature_frequency.entry(name.clone()).or_insert(0.0) += 1.0;
        }
    }
    for v in feature_frequency.values_mut() {
        *v /= folds.len() as f64;
    }

    Ok(EvaluationReport {
        feature_set: feature_set.name().to_string(),
        personalization: personalize,
        tp,
        fp,
        fn_,
        tn,
        precision: m.precision,
        recall: m.recall,
        f2: m.f2,
        folds,
        feature_frequency,
        predictions,
        skipped_patients,
    })
}

/// Monte-Carlo chance baseline: each trial predicts every sample positive
/// with probability 1/2 and scores F2. Returns (mean, sample std).
pub fn random_baseline(labels: &[bool], trials: usize, seed: u64) -> (f64, f64) {
    assert!(!labels.is_empty(), "labels must be nonempty");
    assert!(trials >= 1);
    let scores = exec::map_indices(trials, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(seed, &[t as u64]));
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for &label in labels {
            let predicted = rng.gen_bool(0.5);
            match (predicted, label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        metrics(tp, fp, fn_).f2
    });
    let mean = scores.iter().sum::<f64>() / trials as f64;
    let std = if trials > 1 {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn date(i: usize) -> NaiveDate {
        NaiveDate::from_ymd_opt(2023, 1, 28).unwrap() + Duration::days(7 * i as i64)
    }

    /// Builds a table from (patient id, age, label, feature values) rows.
    fn table(names: &[&str], rows: &[(&str, f64, bool, Vec<f64>)]) -> FeatureTable {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        FeatureTable {
            names: names.iter().map(|s| s.to_string()).collect(),
            rows: rows.iter().map(|r| r.3.clone()).collect(),
            labels: rows.iter().map(|r| r.2).collect(),
            patient_ids: rows.iter().map(|r| r.0.to_string()).collect(),
            ages: rows.iter().map(|r| r.1).collect(),
            window_ends: rows
                .iter()
                .map(|r| {
                    let c = counts.entry(r.0).or_insert(0);
                    *c += 1;
                    date(*c)
                })
                .collect(),
        }
    }

    #[test]
    fn metrics_match_hand_computed_values() {
        let m = metrics(3, 1, 2);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f2 - 0.625).abs() < 1e-12);
        // Published precision/recall pair reproduces its F2 (two decimals).
        assert!((f2_from_pr(0.063, 0.662) - 0.228).abs() < 5e-4);
        // F-beta fixed point: precision = recall = x gives F2 = x.
        assert_eq!(f2_from_pr(0.4, 0.4), 0.4);
        let zero = metrics(0, 5, 7);
        assert_eq!((zero.precision, zero.recall, zero.f2), (0.0, 0.0, 0.0));
        assert_eq!(metrics(0, 0, 0).f2, 0.0);
    }

    #[test]
    fn personalization_ranks_by_age_distance_with_id_ties() {
        // Ages 29 and 31 tie on |age - 30|; p1 < p2 lexicographically.
        let t = table(
            &["x"],
            &[
                ("p1", 29.0, false, vec![1.0]),
                ("p1", 29.0, false, vec![2.0]),
                ("p2", 31.0, false, vec![3.0]),
                ("p2", 31.0, false, vec![4.0]),
                ("p3", 45.0, true, vec![5.0]),
                ("p3", 45.0, false, vec![6.0]),
            ],
        );
        let pool: Vec<usize> = (0..6).collect();
        // subset_size 3: p1 (2 samples) then p2 (4 total) then stop; plus the
        // positive from distant p3.
        let subset = personalization_subset(&t, &pool, 30.0, 3);
        assert_eq!(subset, vec![0, 1, 2, 3, 4]);
        // subset_size 1: only p1, plus the positive union.
        assert_eq!(personalization_subset(&t, &pool, 30.0, 1), vec![0, 1, 4]);
    }

    #[test]
    fn personalization_saturates_to_the_whole_pool() {
        let t = table(
            &["x"],
            &[
                ("p1", 20.0, true, vec![1.0]),
                ("p2", 60.0, false, vec![2.0]),
            ],
        );
        let pool = vec![0, 1];
        assert_eq!(personalization_subset(&t, &pool, 30.0, 10), vec![0, 1]);
    }

    #[test]
    fn feature_selection_ranks_by_absolute_correlation() {
        let rows: Vec<(&str, f64, bool, Vec<f64>)> = (0..8)
            .map(|i| {
                let label = i % 2 == 0;
                (
                    "p1",
                    30.0,
                    label,
                    vec![
                        7.0,                                  // constant
                        if label { 1.0 } else { 0.0 },        // oracle
                        -(label as u8 as f64),                // perfect negative
                        (i as f64 * 0.37).sin(),              // noise
                    ],
                )
            })
            .collect();
        let t = table(&["a_const", "b_oracle", "c_anti", "d_noise"], &rows);
        let subset: Vec<usize> = (0..8).collect();
        let top = select_features(&t, &subset, 2).unwrap();
        // Both |r| = 1; tie falls to the smaller column (name order).
        assert_eq!(top, vec![1, 2]);
        let all = select_features(&t, &subset, 99).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(all[3], 0, "constant feature ranks last");
        let single: Vec<usize> = (0..8).filter(|i| i % 2 == 0).collect();
        assert!(matches!(select_features(&t, &single, 2), Err(Error::SingleClass)));
    }

    /// 4 patients x 8 samples; feature 0 encodes the label exactly, feature 1
    /// is structured noise.
    fn oracle_table() -> FeatureTable {
        let mut rows = Vec::new();
        for (pi, id) in ["p1", "p2", "p3", "p4"].iter().enumerate() {
            for s in 0..8 {
                let label = (pi + s) % 3 == 0;
                rows.push((
                    *id,
                    25.0 + 5.0 * pi as f64,
                    label,
                    vec![label as u8 as f64, ((pi * 31 + s * 7) % 13) as f64],
                ));
            }
        }
        table(&["oracle", "noise"], &rows)
    }

    #[test]
    fn tuning_returns_single_point_grid_unchanged() {
        let t = oracle_table();
        let train: Vec<usize> = (0..t.len()).collect();
        let grids = Grids { n_bins: vec![3], subset_size: vec![10], n_features: vec![2] };
        let tuned = tune_hyperparameters(&t, &train, 30.0, true, &grids, 11).unwrap();
        assert_eq!((tuned.n_bins, tuned.subset_size, tuned.n_features), (3, 10, 2));
    }

    #[test]
    fn tuning_finds_the_oracle_config_and_prefers_small_ties() {
        let t = oracle_table();
        let train: Vec<usize> = (0..t.len()).collect();
        let grids = Grids {
            n_bins: vec![2, 4],
            subset_size: vec![8, 16],
            n_features: vec![1, 2],
        };
        let tuned = tune_hyperparameters(&t, &train, 30.0, true, &grids, 5).unwrap();
        // The oracle feature makes every config perfect; the tie rule then
        // prefers the smallest grid point on every axis.
        assert_eq!(tuned.mean_f2, 1.0);
        assert_eq!((tuned.n_bins, tuned.subset_size, tuned.n_features), (2, 8, 1));
    }

    #[test]
    fn tuning_is_deterministic() {
        let t = oracle_table();
        let train: Vec<usize> = (0..t.len()).collect();
        let grids = Grids {
            n_bins: vec![2, 3],
            subset_size: vec![8],
            n_features: vec![1, 2],
        };
        let a = tune_hyperparameters(&t, &train, 30.0, true, &grids, 42).unwrap();
        let b = tune_hyperparameters(&t, &train, 30.0, true, &grids, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lopo_with_an_oracle_feature_is_perfect() {
        let t = oracle_table();
        let grids = Grids { n_bins: vec![2], subset_size: vec![8], n_features: vec![1] };
        let report = lopo_evaluate(&t, FeatureSet::All, true, &grids, 9).unwrap();
        assert_eq!(report.f2, 1.0);
        assert_eq!(report.fp + report.fn_, 0);
        assert_eq!(report.folds.len(), 4);
        assert!(report.skipped_patients.is_empty());
        assert_eq!(report.predictions.len(), t.len());
        // Every fold selected the oracle feature: frequency 1.
        assert_eq!(report.feature_frequency["oracle"], 1.0);
        // The report's F2 must be recomputable from precision/recall.
        assert!((report.f2 - f2_from_pr(report.precision, report.recall)).abs() < 1e-9);
        // Bootstraps balanced in every fold.
        for fold in &report.folds {
            for &(p, n) in &fold.bootstrap_counts {
                assert_eq!(p, n);
            }
        }
    }

    #[test]
    fn lopo_without_personalization_uses_the_whole_pool() {
        let t = oracle_table();
        let grids = Grids { n_bins: vec![2], subset_size: vec![4], n_features: vec![1] };
        let report = lopo_evaluate(&t, FeatureSet::All, false, &grids, 9).unwrap();
        for fold in &report.folds {
            assert_eq!(fold.subset_len, 24, "whole training pool without personalization");
        }
        assert_eq!(report.f2, 1.0);
    }

    #[test]
    fn lopo_on_pure_noise_stays_near_the_random_baseline() {
        let mut rows = Vec::new();
        for (pi, id) in ["p1", "p2", "p3", "p4", "p5", "p6"].iter().enumerate() {
            for s in 0..10 {
                let label = (pi * 17 + s * 29) % 10 < 3;
                let x = (pi * 131 + s * 37) % 23;
                rows.push((
                    *id,
                    20.0 + 3.0 * pi as f64,
                    label,
                    vec![x as f64, ((x * x) % 19) as f64],
                ));
            }
        }
        let t = table(&["n1", "n2"], &rows);
        let grids = Grids { n_bins: vec![2, 3], subset_size: vec![20], n_features: vec![2] };
        let report = lopo_evaluate(&t, FeatureSet::All, true, &grids, 17).unwrap();
        let (mean, std) = random_baseline(&t.labels, 1000, 23);
        assert!(
            (report.f2 - mean).abs() <= 3.0 * std,
            "noise F2 {} vs baseline {mean} +/- {std}",
            report.f2
        );
    }

    #[test]
    fn lopo_rejects_tiny_or_negative_cohorts() {
        let t = table(
            &["x"],
            &[("p1", 30.0, true, vec![1.0]), ("p2", 31.0, false, vec![0.0])],
        );
        assert!(lopo_evaluate(&t, FeatureSet::All, true, &Grids::default(), 0).is_err());
        let all_neg = table(
            &["x"],
            &[
                ("p1", 30.0, false, vec![1.0]),
                ("p2", 31.0, false, vec![0.0]),
                ("p3", 32.0, false, vec![2.0]),
            ],
        );
        assert!(matches!(
            lopo_evaluate(&all_neg, FeatureSet::All, true, &Grids::default(), 0),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn random_baseline_is_deterministic_and_self_consistent() {
        let labels: Vec<bool> = (0..200).map(|i| i % 5 == 0).collect();
        let a = random_baseline(&labels, 500, 7);
        let b = random_baseline(&labels, 500, 7);
        assert_eq!(a, b);
        // Different seed: means agree within 3 combined standard errors.
        let c = random_baseline(&labels, 500, 8);
        let se = ((a.1 * a.1 + c.1 * c.1) / 500.0).sqrt();
        assert!((a.0 - c.0).abs() <= 3.0 * se, "{} vs {}", a.0, c.0);
        let none = random_baseline(&vec![false; 50], 100, 3);
        assert_eq!(none, (0.0, 0.0));
    }
}
