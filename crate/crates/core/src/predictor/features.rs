//! Window construction and feature extraction for the weekly prediction
//! samples.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};

use crate::registry::{ModalityRegistry, N_HOURS};
use crate::scoring::ScoreRow;
use crate::template::{Cohort, MobilityDay, PatientRecord};

use super::WindowSample;

/// Length of the feature-extraction window, in days (window end inclusive).
pub const FEATURE_WINDOW_DAYS: i64 = 28;
/// Length of the prediction window following the feature window.
pub const PREDICTION_WINDOW_DAYS: i64 = 7;
/// A relapse on day r marks days r-27..=r as its pre-relapse month.
pub const PRE_RELAPSE_DAYS: i64 = 28;
/// Default stride between consecutive window ends.
pub const DEFAULT_STRIDE: usize = 7;

/// Modalities that get the full set of template-shape features.
pub const TEMPLATE_FEATURE_MODALITIES: [&str; 6] = [
    "acceleration",
    "ambient_light",
    "ambient_sound",
    "conversation_duration",
    "distance_traveled",
    "call_duration",
];

const SCREEN_MODALITY: &str = "screen_unlock_duration";

const TEMPLATE_SUFFIXES: [&str; 13] = [
    "template_mean",
    "template_std",
    "template_max",
    "template_range",
    "template_skewness",
    "template_kurtosis",
    "std_template_mean",
    "max_template_dev",
    "rhythm_distance",
    "rhythm_distance_weighted",
    "rhythm_distance_max",
    "daily_avg_mean",
    "daily_avg_std",
];

/// Builds one sample per patient per `stride` days: a 28-day feature window
/// ending at t plus a label from the following 7 days. Window ends start at
/// the patient's 28th day and advance while the prediction window still fits
/// inside the record, so a patient spanning fewer than 35 days yields no
/// samples (logged).
pub fn make_window_samples(
    cohort: &Cohort,
    registry: &ModalityRegistry,
    scores: &[ScoreRow],
    stride: usize,
) -> Vec<WindowSample> {
    assert!(stride > 0, "stride must be positive");
    let by_day: BTreeMap<(&str, NaiveDate), &ScoreRow> = scores
        .iter()
        .map(|row| ((row.patient_id.as_str(), row.date), row))
        .collect();
    let mut out = Vec::new();
    for patient in &cohort.patients {
        let (Some(first), Some(last)) = (patient.first_date(), patient.last_date()) else {
            continue;
        };
        let before = out.len();
        let mut t = first + Duration::days(FEATURE_WINDOW_DAYS - 1);
        while t + Duration::days(PREDICTION_WINDOW_DAYS) <= last {
            let window: Vec<NaiveDate> = (0..FEATURE_WINDOW_DAYS)
                .map(|i| t - Duration::days(FEATURE_WINDOW_DAYS - 1 - i))
                .collect();
            let (mut features, mut imputed) = extract_baseline_features(patient, registry, &window);
            let rows: Vec<&ScoreRow> = window
                .iter()
                .filter_map(|d| by_day.get(&(patient.patient_id.as_str(), *d)).copied())
                .collect();
            let (cluster_features, cluster_imputed) = extract_clustering_features(&rows);
            features.extend(cluster_features);
            imputed.extend(cluster_imputed);
            imputed.sort();
            out.push(WindowSample {
                patient_id: patient.patient_id.clone(),
                window_end: t,
                label: window_label(t, &patient.relapse_events),
                age: patient.age,
                features,
                imputed,
            });
            t += Duration::days(stride as i64);
        }
        if out.len() == before {
            log::warn!(
                "patient {} spans fewer than {} days; no prediction samples",
                patient.patient_id,
                FEATURE_WINDOW_DAYS + PREDICTION_WINDOW_DAYS
            );
        }
    }
    out
}

/// Label rule: positive iff the prediction window t+1..=t+7 intersects some
/// relapse's pre-relapse month r-27..=r.
pub(crate) fn window_label(t: NaiveDate, relapses: &[NaiveDate]) -> bool {
    relapses.iter().any(|&r| {
        let pre_start = r - Duration::days(PRE_RELAPSE_DAYS - 1);
        t + Duration::days(1) <= r && pre_start <= t + Duration::days(PREDICTION_WINDOW_DAYS)
    })
}

/// Extracts the baseline feature map for one window. Returns the features
/// alongside the names that had no observations and are left for the caller
/// to impute as 0.
pub fn extract_baseline_features(
    patient: &PatientRecord,
    registry: &ModalityRegistry,
    window: &[NaiveDate],
) -> (BTreeMap<String, f64>, Vec<String>) {
    let mut features = BTreeMap::new();
    let mut imputed = Vec::new();

    for name in TEMPLATE_FEATURE_MODALITIES {
        let m = registry
            .index_of(name)
            .unwrap_or_else(|| panic!("registry is missing modality {name:?}"));
        match template_shape_features(patient, m, window) {
            Some(values) => {
                for (suffix, v) in TEMPLATE_SUFFIXES.iter().zip(values) {
                    features.insert(format!("{name}_{suffix}"), v);
                }
            }
            None => imputed.extend(TEMPLATE_SUFFIXES.iter().map(|s| format!("{name}_{s}"))),
        }
    }

    for item in 0..10 {
        let values: Vec<f64> = window
            .iter()
            .filter_map(|d| patient.ema.get(d).map(|items| items[item]))
            .collect();
        let base = format!("ema_item_{:02}", item + 1);
        if values.is_empty() {
            imputed.push(format!("{base}_mean"));
            imputed.push(format!("{base}_std"));
        } else {
            features.insert(format!("{base}_mean"), mean(&values));
            features.insert(format!("{base}_std"), pop_std(&values));
        }
    }

    let screen = registry
        .index_of(SCREEN_MODALITY)
        .unwrap_or_else(|| panic!("registry is missing modality {SCREEN_MODALITY:?}"));
    let daily = daily_averages(patient, screen, window);
    if daily.is_empty() {
        imputed.push(format!("{SCREEN_MODALITY}_daily_avg_mean"));
        imputed.push(format!("{SCREEN_MODALITY}_daily_avg_std"));
    } else {
        features.insert(format!("{SCREEN_MODALITY}_daily_avg_mean"), mean(&daily));
        features.insert(format!("{SCREEN_MODALITY}_daily_avg_std"), pop_std(&daily));
    }

    for (k, series) in MobilityDay::SERIES_NAMES.iter().enumerate() {
        let values: Vec<f64> = window
            .iter()
            .filter_map(|d| patient.mobility.get(d).map(|day| day.series()[k]))
            .collect();
        if values.is_empty() {
            imputed.push(format!("mobility_{series}_mean"));
            imputed.push(format!("mobility_{series}_std"));
        } else {
            features.insert(format!("mobility_{series}_mean"), mean(&values));
            features.insert(format!("mobility_{series}_std"), pop_std(&values));
        }
    }

    features.insert("age".into(), patient.age);
    features.insert("education_years".into(), patient.education_years);
    (features, imputed)
}

/// The 13 template-shape features for one modality, or None when the window
/// holds no unmasked observation of it at all.
fn template_shape_features(
    patient: &PatientRecord,
    m: usize,
    window: &[NaiveDate],
) -> Option<[f64; 13]> {
    // Per-hour samples across the window's days, mask-aware.
    let mut per_hour: Vec<Vec<f64>> = vec![Vec::new(); N_HOURS];
    let mut daily = Vec::new();
    for d in window {
        let Some(t) = patient.templates.get(d) else { continue };
        let mut day_values = Vec::new();
        for h in 0..N_HOURS {
            if !t.is_missing(m, h) {
                per_hour[h].push(t.values[m][h]);
                day_values.push(t.values[m][h]);
            }
        }
        if !day_values.is_empty() {
            daily.push(mean(&day_values));
        }
    }
    if per_hour.iter().all(|v| v.is_empty()) {
        return None;
    }

    let mean_tpl: Vec<f64> = per_hour.iter().map(|v| mean(v)).collect();
    let std_tpl: Vec<f64> = per_hour.iter().map(|v| pop_std(v)).collect();
    let max_tpl: Vec<f64> = per_hour
        .iter()
        .map(|v| v.iter().copied().fold(0.0, f64::max))
        .collect();

    let half = window.len() / 2;
    let first_half = half_mean_template(patient, m, &window[..half]);
    let second_half = half_mean_template(patient, m, &window[half..]);
    let n_first = l2_normalize(&first_half);
    let n_second = l2_normalize(&second_half);

    let variances: Vec<f64> = per_hour.iter().map(|v| pop_var(v)).collect();
    let total_var: f64 = variances.iter().sum();
    let weighted = if total_var > 0.0 {
        (0..N_HOURS)
            .map(|h| variances[h] / total_var * (n_first[h] - n_second[h]).powi(2))
            .sum::<f64>()
            .sqrt()
    } else {
        0.0
    };

    let max_v = mean_tpl.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_v = mean_tpl.iter().copied().fold(f64::INFINITY, f64::min);
    let max_dev = mean_tpl
        .iter()
        .zip(&max_tpl)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    Some([
        mean(&mean_tpl),
        pop_std(&mean_tpl),
        max_v,
        max_v - min_v,
        skewness(&mean_tpl),
        kurtosis(&mean_tpl),
        mean(&std_tpl),
        max_dev,
        euclid(&n_first, &n_second),
        weighted,
        euclid(&l2_normalize(&max_tpl), &l2_normalize(&mean_tpl)),
        mean(&daily),
        pop_std(&daily),
    ])
}

fn half_mean_template(patient: &PatientRecord, m: usize, days: &[NaiveDate]) -> Vec<f64> {
    let mut per_hour: Vec<Vec<f64>> = vec![Vec::new(); N_HOURS];
    for d in days {
        let Some(t) = patient.templates.get(d) else { continue };
        for h in 0..N_HOURS {
            if !t.is_missing(m, h) {
                per_hour[h].push(t.values[m][h]);
            }
        }
    }
    per_hour.iter().map(|v| mean(v)).collect()
}

fn daily_averages(patient: &PatientRecord, m: usize, window: &[NaiveDate]) -> Vec<f64> {
    let mut out = Vec::new();
    for d in window {
        let Some(t) = patient.templates.get(d) else { continue };
        let values: Vec<f64> = (0..N_HOURS)
            .filter(|&h| !t.is_missing(m, h))
            .map(|h| t.values[m][h])
            .collect();
        if !values.is_empty() {
            out.push(mean(&values));
        }
    }
    out
}

/// Extracts clustering features from the window's scored days (date order).
/// Each model contributes features only when it scored at least one day;
/// otherwise its names are reported for imputation.
pub fn extract_clustering_features(
    rows: &[&ScoreRow],
) -> (BTreeMap<String, f64>, Vec<String>) {
    let mut features = BTreeMap::new();
    let mut imputed = Vec::new();

    let gmm: Vec<_> = rows.iter().filter_map(|r| r.gmm.as_ref()).collect();
    if gmm.is_empty() {
        imputed.extend(
            [
                "gmm_label_mean",
                "gmm_label_std",
                "gmm_assigned_likelihood_mean",
                "gmm_assigned_likelihood_std",
                "gmm_weighted_likelihood_mean",
                "gmm_weighted_likelihood_std",
                "gmm_transitions",
                "gmm_states",
            ]
            .map(String::from),
        );
    } else {
        let labels: Vec<f64> = gmm.iter().map(|s| s.label as f64).collect();
        insert_mean_std(&mut features, "gmm_label", &labels);
        let assigned: Vec<f64> = gmm.iter().map(|s| s.assigned_likelihood).collect();
        insert_mean_std(&mut features, "gmm_assigned_likelihood", &assigned);
        let weighted: Vec<f64> = gmm.iter().map(|s| s.weighted_likelihood).collect();
        insert_mean_std(&mut features, "gmm_weighted_likelihood", &weighted);
        features.insert("gmm_transitions".into(), transitions(&labels));
        features.insert("gmm_states".into(), distinct(&labels));
    }

    let pam: Vec<_> = rows.iter().filter_map(|r| r.pam.as_ref()).collect();
    if pam.is_empty() {
        imputed.extend(
            [
                "pam_label_mean",
                "pam_label_std",
                "pam_assigned_distance_mean",
                "pam_assigned_distance_std",
                "pam_weighted_distance_mean",
                "pam_weighted_distance_std",
                "pam_dtw_prev_day_mean",
                "pam_dtw_prev_day_std",
                "pam_transitions",
                "pam_states",
            ]
            .map(String::from),
        );
    } else {
        let labels: Vec<f64> = pam.iter().map(|s| s.label as f64).collect();
        insert_mean_std(&mut features, "pam_label", &labels);
        let assigned: Vec<f64> = pam.iter().map(|s| s.assigned_distance).collect();
        insert_mean_std(&mut features, "pam_assigned_distance", &assigned);
        let weighted: Vec<f64> = pam.iter().map(|s| s.weighted_distance).collect();
        insert_mean_std(&mut features, "pam_weighted_distance", &weighted);
        let prev: Vec<f64> = pam.iter().filter_map(|s| s.dtw_prev_day).collect();
        if prev.is_empty() {
            imputed.push("pam_dtw_prev_day_mean".into());
            imputed.push("pam_dtw_prev_day_std".into());
        } else {
            insert_mean_std(&mut features, "pam_dtw_prev_day", &prev);
        }
        features.insert("pam_transitions".into(), transitions(&labels));
        features.insert("pam_states".into(), distinct(&labels));
    }

    (features, imputed)
}

fn insert_mean_std(features: &mut BTreeMap<String, f64>, base: &str, values: &[f64]) {
    features.insert(format!("{base}_mean"), mean(values));
    features.insert(format!("{base}_std"), pop_std(values));
}

fn transitions(labels: &[f64]) -> f64 {
    labels.windows(2).filter(|w| w[0] != w[1]).count() as f64
}

fn distinct(labels: &[f64]) -> f64 {
    let mut sorted: Vec<u64> = labels.iter().map(|&l| l as u64).collect();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.len() as f64
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn pop_var(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / xs.len() as f64
}

fn pop_std(xs: &[f64]) -> f64 {
    pop_var(xs).sqrt()
}

fn skewness(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    let m2 = pop_var(xs);
    if m2 == 0.0 {
        return 0.0;
    }
    let m3 = xs.iter().map(|x| (x - mu).powi(3)).sum::<f64>() / xs.len() as f64;
    m3 / m2.powf(1.5)
}

/// Excess kurtosis (normal distribution reads 0).
fn kurtosis(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    let m2 = pop_var(xs);
    if m2 == 0.0 {
        return 0.0;
    }
    let m4 = xs.iter().map(|x| (x - mu).powi(4)).sum::<f64>() / xs.len() as f64;
    m4 / (m2 * m2) - 3.0
}

fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GmmDayScores;
    use crate::pam::PamDayScores;
    use crate::registry::N_MODALITIES;
    use crate::template::DailyTemplate;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn day(n: i64) -> NaiveDate {
        d("2023-01-01") + Duration::days(n - 1)
    }

    /// A patient observed on days 1..=n_days with values[m][h] from `f(day, m, h)`.
    fn patient_with(n_days: i64, f: impl Fn(i64, usize, usize) -> f64) -> PatientRecord {
        let mut p = PatientRecord::new("p1", 30.0, 12.0);
        for n in 1..=n_days {
            let date = day(n);
            let values = (0..N_MODALITIES)
                .map(|m| (0..N_HOURS).map(|h| f(n, m, h)).collect())
                .collect();
            p.templates.insert(
                date,
                DailyTemplate { date, values, missing: vec![] },
            );
        }
        p
    }

    fn registry() -> ModalityRegistry {
        ModalityRegistry::default_registry()
    }

    #[test]
    fn seventy_day_record_yields_six_weekly_sample_ends() {
        let p = patient_with(70, |n, m, h| (n * 31 + (m * 24 + h) as i64 % 17) as f64);
        let cohort = Cohort { patients: vec![p] };
        let samples = make_window_samples(&cohort, &registry(), &[], DEFAULT_STRIDE);
        let ends: Vec<NaiveDate> = samples.iter().map(|s| s.window_end).collect();
        assert_eq!(ends, vec![day(28), day(35), day(42), day(49), day(56), day(63)]);
        assert!(samples.iter().all(|s| !s.label));
    }

    #[test]
    fn short_record_yields_no_samples() {
        let p = patient_with(34, |n, _, _| n as f64);
        let cohort = Cohort { patients: vec![p] };
        assert!(make_window_samples(&cohort, &registry(), &[], DEFAULT_STRIDE).is_empty());
    }

    #[test]
    fn relapse_day_sixty_marks_overlapping_windows_positive() {
        let mut p = patient_with(70, |n, m, h| (n + (m + h) as i64) as f64);
        p.relapse_events.push(day(60));
        let cohort = Cohort { patients: vec![p] };
        let samples = make_window_samples(&cohort, &registry(), &[], DEFAULT_STRIDE);
        let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
        // Pre-relapse month is days 33..=60; prediction windows ending by day
        // 63 overlap it, the final window (days 64..70) does not.
        assert_eq!(labels, vec![true, true, true, true, true, false]);
    }

    #[test]
    fn label_rule_matches_day_enumeration_oracle() {
        let relapses = [day(40), day(90), day(95)];
        for t_day in 1..120 {
            let t = day(t_day);
            let brute = (1..=PREDICTION_WINDOW_DAYS).any(|off| {
                let pd = t + Duration::days(off);
                relapses.iter().any(|&r| {
                    (0..PRE_RELAPSE_DAYS).any(|back| r - Duration::days(back) == pd)
                })
            });
            assert_eq!(window_label(t, &relapses), brute, "window end day {t_day}");
        }
    }

    #[test]
    fn baseline_census_is_110_features() {
        let mut p = patient_with(70, |n, m, h| ((n * 7 + (m * 29 + h * 13) as i64) % 23) as f64);
        for n in 1..=70 {
            p.ema.insert(day(n), [n as f64 * 0.1; 10]);
            p.mobility.insert(
                day(n),
                MobilityDay {
                    distance_from_home: n as f64,
                    total_movement: 2.0 * n as f64,
                    time_in_location: 1.0,
                    time_at_home: 8.0,
                },
            );
        }
        let window: Vec<NaiveDate> = (1..=28).map(day).collect();
        let (features, imputed) = extract_baseline_features(&p, &registry(), &window);
        assert!(imputed.is_empty(), "unexpected imputations: {imputed:?}");
        assert_eq!(features.len(), 110);
        assert_eq!(features.keys().filter(|k| k.starts_with("ema_item_")).count(), 20);
        assert_eq!(features.keys().filter(|k| k.starts_with("mobility_")).count(), 8);
        assert_eq!(features["age"], 30.0);
        assert_eq!(features["education_years"], 12.0);
    }

    #[test]
    fn constant_modality_zeroes_shape_features() {
        let p = patient_with(28, |_, m, _| if m == 0 { 4.0 } else { 1.0 });
        let window: Vec<NaiveDate> = (1..=28).map(day).collect();
        let (features, _) = extract_baseline_features(&p, &registry(), &window);
        assert_eq!(features["acceleration_template_mean"], 4.0);
        assert_eq!(features["acceleration_template_max"], 4.0);
        assert_eq!(features["acceleration_daily_avg_mean"], 4.0);
        for suffix in [
            "template_std",
            "template_range",
            "template_skewness",
            "template_kurtosis",
            "std_template_mean",
            "max_template_dev",
            "rhythm_distance",
            "rhythm_distance_weighted",
            "rhythm_distance_max",
            "daily_avg_std",
        ] {
            assert_eq!(features[&format!("acceleration_{suffix}")], 0.0, "{suffix}");
        }
    }

    #[test]
    fn daily_averages_one_and_three_give_mean_two_std_one() {
        let p = patient_with(2, |n, _, _| if n == 1 { 1.0 } else { 3.0 });
        let window: Vec<NaiveDate> = (1..=28).map(day).collect();
        let (features, _) = extract_baseline_features(&p, &registry(), &window);
        assert_eq!(features["acceleration_daily_avg_mean"], 2.0);
        assert_eq!(features["acceleration_daily_avg_std"], 1.0);
        assert_eq!(features["screen_unlock_duration_daily_avg_mean"], 2.0);
        assert_eq!(features["screen_unlock_duration_daily_avg_std"], 1.0);
    }

    #[test]
    fn ema_features_cover_all_ten_items() {
        let mut p = patient_with(28, |n, _, _| n as f64);
        p.ema.insert(day(1), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        p.ema.insert(day(2), [3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let window: Vec<NaiveDate> = (1..=28).map(day).collect();
        let (features, _) = extract_baseline_features(&p, &registry(), &window);
        assert_eq!(features.keys().filter(|k| k.starts_with("ema_item_")).count(), 20);
        assert_eq!(features["ema_item_01_mean"], 2.0);
        assert_eq!(features["ema_item_01_std"], 1.0);
        assert_eq!(features["ema_item_10_mean"], 2.0);
        assert_eq!(features["ema_item_10_std"], 0.0);
    }

    #[test]
    fn unobserved_families_are_flagged_for_imputation() {
        // Mask out ambient_light entirely; provide no EMA/mobility at all.
        let mut p = patient_with(28, |n, _, _| n as f64);
        for t in p.templates.values_mut() {
            let mut mask = vec![[false; N_HOURS]; N_MODALITIES];
            mask[1] = [true; N_HOURS];
            *t = DailyTemplate::from_parts(t.date, t.values.clone(), &mask);
        }
        let window: Vec<NaiveDate> = (1..=28).map(day).collect();
        let (features, imputed) = extract_baseline_features(&p, &registry(), &window);
        assert!(features.keys().all(|k| !k.starts_with("ambient_light_")));
        assert_eq!(imputed.iter().filter(|k| k.starts_with("ambient_light_")).count(), 13);
        assert_eq!(imputed.iter().filter(|k| k.starts_with("ema_item_")).count(), 20);
        assert_eq!(imputed.iter().filter(|k| k.starts_with("mobility_")).count(), 8);
    }

    #[test]
    fn skewness_and_kurtosis_match_moment_formulas() {
        // Single fully observed day: the mean template is the day itself.
        let p = patient_with(1, |_, m, h| if m == 0 { (h * h) as f64 } else { 0.0 });
        let window = vec![day(1)];
        let (features, _) = extract_baseline_features(&p, &registry(), &window);
        let xs: Vec<f64> = (0..24).map(|h| (h * h) as f64).collect();
        let mu = xs.iter().sum::<f64>() / 24.0;
        let m2 = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 24.0;
        let m3 = xs.iter().map(|x| (x - mu).powi(3)).sum::<f64>() / 24.0;
        let m4 = xs.iter().map(|x| (x - mu).powi(4)).sum::<f64>() / 24.0;
        assert!((features["acceleration_template_skewness"] - m3 / m2.powf(1.5)).abs() < 1e-12);
        assert!((features["acceleration_template_kurtosis"] - (m4 / (m2 * m2) - 3.0)).abs() < 1e-12);
    }

    fn score_row(date: NaiveDate, gmm_label: usize, pam_label: usize, prev: Option<f64>) -> ScoreRow {
        ScoreRow {
            patient_id: "p1".into(),
            date,
            gmm: Some(GmmDayScores {
                label: gmm_label,
                assigned_likelihood: 0.5,
                weighted_likelihood: 0.25,
            }),
            pam: Some(PamDayScores {
                label: pam_label,
                assigned_distance: 1.0,
                weighted_distance: 2.0,
                dtw_prev_day: prev,
            }),
        }
    }

    #[test]
    fn clustering_transitions_and_states_follow_label_runs() {
        let rows: Vec<ScoreRow> = [1, 1, 2, 2, 1]
            .iter()
            .enumerate()
            .map(|(i, &l)| score_row(day(i as i64 + 1), l, l, Some(0.5)))
            .collect();
        let refs: Vec<&ScoreRow> = rows.iter().collect();
        let (features, imputed) = extract_clustering_features(&refs);
        assert!(imputed.is_empty());
        assert_eq!(features.len(), 18);
        assert_eq!(features["gmm_transitions"], 2.0);
        assert_eq!(features["gmm_states"], 2.0);
        assert_eq!(features["pam_transitions"], 2.0);
        assert_eq!(features["pam_states"], 2.0);
        // Labels treated as numeric: mean of [1,1,2,2,1] = 1.4.
        assert!((features["gmm_label_mean"] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn constant_labels_have_no_transitions() {
        let rows: Vec<ScoreRow> = (1..=3)
            .map(|i| score_row(day(i), 3, 3, None))
            .collect();
        let refs: Vec<&ScoreRow> = rows.iter().collect();
        let (features, imputed) = extract_clustering_features(&refs);
        assert_eq!(features["gmm_label_std"], 0.0);
        assert_eq!(features["gmm_transitions"], 0.0);
        assert_eq!(features["gmm_states"], 1.0);
        // No dtw_prev_day values anywhere in the window.
        assert!(imputed.contains(&"pam_dtw_prev_day_mean".to_string()));
        assert!(!features.contains_key("pam_dtw_prev_day_mean"));
    }

    #[test]
    fn numeric_label_mean_of_one_and_three_is_two() {
        let rows: Vec<ScoreRow> = [(1, 1), (2, 3)]
            .iter()
            .map(|&(i, l)| score_row(day(i), l, l, Some(1.0)))
            .collect();
        let refs: Vec<&ScoreRow> = rows.iter().collect();
        let (features, _) = extract_clustering_features(&refs);
        assert_eq!(features["gmm_label_mean"], 2.0);
        assert_eq!(features["pam_label_mean"], 2.0);
    }

    #[test]
    fn unscored_window_flags_all_clustering_features() {
        let (features, imputed) = extract_clustering_features(&[]);
        assert!(features.is_empty());
        assert_eq!(imputed.len(), 18);
        assert_eq!(imputed.iter().filter(|k| k.starts_with("gmm_")).count(), 8);
        assert_eq!(imputed.iter().filter(|k| k.starts_with("pam_")).count(), 10);
    }

    #[test]
    fn samples_carry_clustering_features_when_scores_exist() {
        let p = patient_with(35, |n, m, h| ((n + m as i64 * 3 + h as i64) % 11) as f64);
        let rows: Vec<ScoreRow> = (1..=35)
            .map(|i| score_row(day(i), 1 + (i % 2) as usize, 1, Some(2.0)))
            .collect();
        let cohort = Cohort { patients: vec![p] };
        let samples = make_window_samples(&cohort, &registry(), &rows, DEFAULT_STRIDE);
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert!(s.features.contains_key("gmm_label_mean"));
        assert!(s.features.contains_key("pam_dtw_prev_day_std"));
        assert!(s.features.contains_key("acceleration_template_mean"));
        // 110 baseline minus 28 flagged (no EMA, no mobility) plus 18 clustering.
        assert_eq!(s.imputed.iter().filter(|k| k.starts_with("ema_")).count(), 20);
        assert_eq!(s.features.len(), 110 - 28 + 18);
    }
}
