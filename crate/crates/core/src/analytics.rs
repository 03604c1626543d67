//! Cluster characterization and near-relapse effect sizes.
//!
//! Clusters are summarized by member count, covariance trace (in the space
//! the model was fitted in), and mean hourly profiles. Near-relapse change
//! is quantified per relapse event by Cliff's delta between the score
//! samples of the NRx window (the x calendar days immediately before the
//! relapse) and the pre-NRx period (observed days after the previous
//! relapse and before the window).

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::scoring::ScoreRow;
use crate::template::{Cohort, DailyTemplate};
use crate::{Error, Result};

/// |delta| above this is a non-negligible effect.
pub const CLIFFS_DELTA_THRESHOLD: f64 = 0.147;
/// Near-relapse window lengths, in days.
pub const DEFAULT_NR_WINDOWS: [u32; 4] = [7, 14, 20, 30];

/// Score series that feed the near-relapse comparisons.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    GmmAssignedLikelihood,
    GmmWeightedLikelihood,
    PamAssignedDistance,
    PamWeightedDistance,
    PamDtwPrevDay,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 5] = [
        ScoreKind::GmmAssignedLikelihood,
        ScoreKind::GmmWeightedLikelihood,
        ScoreKind::PamAssignedDistance,
        ScoreKind::PamWeightedDistance,
        ScoreKind::PamDtwPrevDay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::GmmAssignedLikelihood => "gmm_assigned_likelihood",
            ScoreKind::GmmWeightedLikelihood => "gmm_weighted_likelihood",
            ScoreKind::PamAssignedDistance => "pam_assigned_distance",
            ScoreKind::PamWeightedDistance => "pam_weighted_distance",
            ScoreKind::PamDtwPrevDay => "pam_dtw_prev_day",
        }
    }

    /// Extracts this series' value from a score row, when present.
    pub fn extract(self, row: &ScoreRow) -> Option<f64> {
        match self {
            ScoreKind::GmmAssignedLikelihood => {
                row.gmm.as_ref().map(|g| g.assigned_likelihood)
            }
            ScoreKind::GmmWeightedLikelihood => {
                row.gmm.as_ref().map(|g| g.weighted_likelihood)
            }
            ScoreKind::PamAssignedDistance => row.pam.as_ref().map(|p| p.assigned_distance),
            ScoreKind::PamWeightedDistance => row.pam.as_ref().map(|p| p.weighted_distance),
            ScoreKind::PamDtwPrevDay => row.pam.as_ref().and_then(|p| p.dtw_prev_day),
        }
    }
}

/// Mean deltas observed on the original CrossCheck cohort, kept for
/// side-by-side display in reports. Synthetic cohorts are not expected to
/// reproduce them.
pub const CROSSCHECK_REFERENCE_DELTAS: [(ScoreKind, u32, f64); 16] = [
    (ScoreKind::GmmAssignedLikelihood, 7, 0.1346),
    (ScoreKind::GmmAssignedLikelihood, 14, 0.1681),
    (ScoreKind::GmmAssignedLikelihood, 20, 0.1963),
    (ScoreKind::GmmAssignedLikelihood, 30, 0.1129),
    (ScoreKind::GmmWeightedLikelihood, 7, 0.2023),
    (ScoreKind::GmmWeightedLikelihood, 14, 0.2416),
    (ScoreKind::GmmWeightedLikelihood, 20, 0.2552),
    (ScoreKind::GmmWeightedLikelihood, 30, 0.2473),
    (ScoreKind::PamAssignedDistance, 7, -0.1598),
    (ScoreKind::PamAssignedDistance, 14, -0.2150),
    (ScoreKind::PamAssignedDistance, 20, -0.2504),
    (ScoreKind::PamAssignedDistance, 30, -0.2386),
    (ScoreKind::PamWeightedDistance, 7, -0.1787),
    (ScoreKind::PamWeightedDistance, 14, -0.1862),
    (ScoreKind::PamWeightedDistance, 20, -0.2098),
    (ScoreKind::PamWeightedDistance, 30, -0.2171),
];

/// One cluster's summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub label: usize,
    pub size: usize,
    pub covariance_trace: f64,
    /// Mean hourly profile per modality (masked entries excluded; hours
    /// with no unmasked member values are 0).
    pub mean_template: Vec<Vec<f64>>,
    pub mean_assigned_score: f64,
    pub mean_weighted_score: f64,
}

/// NRx / pre-NRx day split around one relapse event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NrPartition {
    pub relapse: NaiveDate,
    pub x: u32,
    pub nr_days: Vec<NaiveDate>,
    pub pre_nr_days: Vec<NaiveDate>,
    /// True when fewer than x observed days fell inside the window.
    pub truncated: bool,
}

/// Cliff's delta of one relapse event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDelta {
    pub patient_id: String,
    pub relapse: NaiveDate,
    pub delta: f64,
    pub n_nr: usize,
    pub n_pre: usize,
}

/// All event deltas for one score series and window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEntry {
    pub score: ScoreKind,
    pub x: u32,
    pub deltas: Vec<EventDelta>,
    /// Mean of the per-event deltas.
    pub mean_delta: f64,
    /// Delta of all NR samples pooled against all pre-NR samples.
    pub pooled_delta: f64,
    /// |mean_delta| > threshold.
    pub non_negligible: bool,
    /// Events dropped because one side had no scored days.
    pub skipped_events: usize,
}

/// Near-relapse effect sizes across score series and window lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub threshold: f64,
    pub entries: Vec<EffectEntry>,
}

/// Trace of the unbiased sample covariance of each cluster's member points.
///
/// Returns one entry per non-empty cluster label; singletons get 0.
pub fn cluster_spread(assignments: &[usize], points: &[Vec<f64>]) -> BTreeMap<usize, f64> {
    assert_eq!(assignments.len(), points.len(), "every point needs a label");
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in assignments.iter().enumerate() {
        members.entry(label).or_default().push(i);
    }
    let mut out = BTreeMap::new();
    for (label, idx) in members {
        let n = idx.len();
        if n < 2 {
            out.insert(label, 0.0);
            continue;
        }
        let q = points[idx[0]].len();
        let mut mean = vec![0.0f64; q];
        for &i in &idx {
            for d in 0..q {
                mean[d] += points[i][d];
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        // Trace of the covariance = sum of per-coordinate sample variances.
        let mut trace = 0.0;
        for d in 0..q {
            let ss: f64 = idx.iter().map(|&i| (points[i][d] - mean[d]).powi(2)).sum();
            trace += ss / (n - 1) as f64;
        }
        out.insert(label, trace);
    }
    out
}

/// Masked-aware elementwise mean template per cluster.
pub fn cluster_profiles(
    assignments: &[usize],
    templates: &[&DailyTemplate],
) -> BTreeMap<usize, Vec<Vec<f64>>> {
    assert_eq!(assignments.len(), templates.len(), "every template needs a label");
    let (nm, nh) = match templates.first() {
        Some(t) => (t.values.len(), t.values[0].len()),
        None => return BTreeMap::new(),
    };
    let mut sums: BTreeMap<usize, (Vec<Vec<f64>>, Vec<Vec<u32>>)> = BTreeMap::new();
    for (&label, t) in assignments.iter().zip(templates) {
        let (sum, count) = sums
            .entry(label)
            .or_insert_with(|| (vec![vec![0.0; nh]; nm], vec![vec![0; nh]; nm]));
        for m in 0..nm {
            for h in 0..nh {
                if !t.is_missing(m, h) {
                    sum[m][h] += t.values[m][h];
                    count[m][h] += 1;
                }
            }
        }
    }
    sums.into_iter()
        .map(|(label, (mut sum, count))| {
            for m in 0..nm {
                for h in 0..nh {
                    if count[m][h] > 0 {
                        sum[m][h] /= count[m][h] as f64;
                    }
                }
            }
            (label, sum)
        })
        .collect()
}

/// Assembles per-cluster summary rows, ordered by descending size and then
/// ascending label.
pub fn cluster_summaries(
    assignments: &[usize],
    trace_points: &[Vec<f64>],
    templates: &[&DailyTemplate],
    assigned_scores: &[f64],
    weighted_scores: &[f64],
) -> Vec<ClusterSummary> {
    let spreads = cluster_spread(assignments, trace_points);
    let profiles = cluster_profiles(assignments, templates);
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    let mut assigned_sum: BTreeMap<usize, f64> = BTreeMap::new();
    let mut weighted_sum: BTreeMap<usize, f64> = BTreeMap::new();
    for (i, &label) in assignments.iter().enumerate() {
        *sizes.entry(label).or_default() += 1;
        *assigned_sum.entry(label).or_default() += assigned_scores[i];
        *weighted_sum.entry(label).or_default() += weighted_scores[i];
    }
    let mut rows: Vec<ClusterSummary> = sizes
        .iter()
        .map(|(&label, &size)| ClusterSummary {
            label,
            size,
            covariance_trace: spreads[&label],
            mean_template: profiles[&label].clone(),
            mean_assigned_score: assigned_sum[&label] / size as f64,
            mean_weighted_score: weighted_sum[&label] / size as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.size.cmp(&a.size).then(a.label.cmp(&b.label)));
    rows
}

/// Splits one patient's observed days around each relapse.
///
/// NRx covers the x calendar days immediately before the relapse date
/// (exclusive of it); pre-NRx covers observed days after the previous
/// relapse and before the window. `observed` and `relapses` must be sorted
/// ascending.
pub fn partition_near_relapse(
    observed: &[NaiveDate],
    relapses: &[NaiveDate],
    x: u32,
) -> Vec<NrPartition> {
    let mut out = Vec::with_capacity(relapses.len());
    for (e, &r) in relapses.iter().enumerate() {
        let window_start = r - chrono::Duration::days(x as i64);
        let prev = e.checked_sub(1).map(|i| relapses[i]);
        let nr_days: Vec<NaiveDate> = observed
            .iter()
            .copied()
            .filter(|&d| d >= window_start && d < r)
            .collect();
        let pre_nr_days: Vec<NaiveDate> = observed
            .iter()
            .copied()
            .filter(|&d| d < window_start && prev.is_none_or(|p| d > p))
            .collect();
        let truncated = nr_days.len() < x as usize;
        out.push(NrPartition { relapse: r, x, nr_days, pre_nr_days, truncated });
    }
    out
}

/// Cliff's delta: (#(a > b) − #(a < b)) / (|g1|·|g2|) over all cross pairs.
pub fn cliffs_delta(g1: &[f64], g2: &[f64]) -> Result<f64> {
    if g1.is_empty() || g2.is_empty() {
        return Err(Error::EmptyInput("cliffs_delta group".into()));
    }
    let mut sorted = g2.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut net: i64 = 0;
    for &a in g1 {
        let less = sorted.partition_point(|&b| b < a);
        let less_eq = sorted.partition_point(|&b| b <= a);
        let greater = sorted.len() - less_eq;
        net += less as i64 - greater as i64;
    }
    Ok(net as f64 / (g1.len() as f64 * g2.len() as f64))
}

/// Computes per-event and pooled Cliff's deltas of each score series
/// between NRx and pre-NRx days.
pub fn effect_report(
    cohort: &Cohort,
    scores: &[ScoreRow],
    xs: &[u32],
    threshold: f64,
) -> EffectReport {
    // Score lookup per patient-day.
    let mut by_day: BTreeMap<(&str, NaiveDate), &ScoreRow> = BTreeMap::new();
    for row in scores {
        by_day.insert((row.patient_id.as_str(), row.date), row);
    }
    let kinds: Vec<ScoreKind> = ScoreKind::ALL
        .into_iter()
        .filter(|kind| scores.iter().any(|r| kind.extract(r).is_some()))
        .collect();

    let mut entries = Vec::new();
    for kind in kinds {
        for &x in xs {
            let mut deltas = Vec::new();
            let mut skipped = 0usize;
            let mut pooled_nr: Vec<f64> = Vec::new();
            let mut pooled_pre: Vec<f64> = Vec::new();
            for patient in &cohort.patients {
                let observed: Vec<NaiveDate> = patient.templates.keys().copied().collect();
                let collect = |days: &[NaiveDate]| -> Vec<f64> {
                    days.iter()
                        .filter_map(|d| by_day.get(&(patient.patient_id.as_str(), *d)))
                        .filter_map(|row| kind.extract(row))
                        .collect()
                };
                for part in partition_near_relapse(&observed, &patient.relapse_events, x) {
                    let nr = collect(&part.nr_days);
                    let pre = collect(&part.pre_nr_days);
                    if nr.is_empty() || pre.is_empty() {
                        log::warn!(
                            "skipping relapse {} of {} for {} NR{}: empty side",
                            part.relapse,
                            patient.patient_id,
                            kind.name(),
                            x
                        );
                        skipped += 1;
                        continue;
                    }
                    let delta = cliffs_delta(&nr, &pre).expect("both sides nonempty");
                    deltas.push(EventDelta {
                        patient_id: patient.patient_id.clone(),
                        relapse: part.relapse,
                        delta,
                        n_nr: nr.len(),
                        n_pre: pre.len(),
                    });
                    pooled_nr.extend(nr);
                    pooled_pre.extend(pre);
                }
            }
            let mean_delta = if deltas.is_empty() {
                0.0
            } else {
                deltas.iter().map(|d| d.delta).sum::<f64>() / deltas.len() as f64
            };
            let pooled_delta = if pooled_nr.is_empty() || pooled_pre.is_empty() {
                0.0
            } else {
                cliffs_delta(&pooled_nr, &pooled_pre).expect("nonempty")
            };
            entries.push(EffectEntry {
                score: kind,
                x,
                non_negligible: mean_delta.abs() > threshold && !deltas.is_empty(),
                deltas,
                mean_delta,
                pooled_delta,
                skipped_events: skipped,
            });
        }
    }
    EffectReport { threshold, entries }
}
