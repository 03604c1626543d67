//! Partitioning around medoids over the pairwise DTW matrix.
//!
//! The objective is the total *squared* DTW distance of every point to its
//! medoid. Fitting runs the classic two phases on a cached distance matrix:
//! BUILD greedily adds the medoid that lowers total cost the most, SWAP
//! repeatedly applies the single (medoid, non-medoid) exchange with the
//! largest strict cost reduction until none remains. All ties break to the
//! lowest index, so a fit is fully deterministic.
//!
//! One SWAP sweep evaluates every exchange in O(n^2 + nk) by accumulating,
//! for each candidate point, the removal loss of each medoid and the shared
//! reassignment gain; the resulting deltas are exactly those of evaluating
//! each swap independently.
//!
//! Model selection fits each k in the range with multiple starts: the first
//! uses BUILD (deterministic), the rest use seeded random medoid subsets,
//! and every start is refined by SWAP. The chosen k maximizes the discrete
//! second difference of the mean cost curve (the elbow); ranges too short
//! for a second difference fall back to the minimum-cost k with a warning
//! flag.

use serde::{Deserialize, Serialize};

use crate::dtw::{self, DistanceMatrix};
use crate::exec;
use crate::template::DailyTemplate;
use crate::{Error, Result};

/// Fitted k-medoids model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamModel {
    pub k: usize,
    /// Indices of the medoids in the training set, ascending.
    pub medoid_indices: Vec<usize>,
    /// Owned copies of the medoid templates, same order as
    /// `medoid_indices`.
    pub medoids: Vec<DailyTemplate>,
    /// Cluster index (0-based, position in `medoid_indices`) of every
    /// training point; each point's assignment is its nearest medoid.
    pub assignments: Vec<usize>,
    /// Training points per cluster.
    pub cluster_sizes: Vec<usize>,
    /// Final total squared DTW cost.
    pub total_squared_cost: f64,
    pub n_train: usize,
    pub seed: u64,
}

/// Per-day scores against a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamDayScores {
    /// 1-based cluster label (nearest medoid; ties to the lowest).
    pub label: usize,
    /// DTW distance to the assigned medoid.
    pub assigned_distance: f64,
    /// Cluster-size-weighted mean DTW distance over all medoids.
    pub weighted_distance: f64,
    /// DTW distance from the previous day's template, when it exists.
    pub dtw_prev_day: Option<f64>,
}

/// Cost curve entry for one candidate k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamCostPoint {
    pub k: usize,
    /// Mean final cost over the starts.
    pub mean_cost: f64,
    /// Final cost of each start.
    pub init_costs: Vec<f64>,
}

/// Outcome of k selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamSelection {
    pub cost_curve: Vec<PamCostPoint>,
    pub chosen_k: usize,
    /// True when the range was too short for an elbow and the minimum-cost
    /// k was used instead.
    pub min_cost_fallback: bool,
    pub model: PamModel,
}

#[inline]
fn sq(x: f64) -> f64 {
    x * x
}

/// Nearest and second-nearest medoid of every point (squared distances).
struct Assignment {
    nearest: Vec<usize>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn assign(dist: &DistanceMatrix, medoids: &[usize]) -> Assignment {
    let n = dist.len();
    let mut nearest = vec![0usize; n];
    let mut d1 = vec![f64::INFINITY; n];
    let mut d2 = vec![f64::INFINITY; n];
    for i in 0..n {
        for (c, &m) in medoids.iter().enumerate() {
            let d = sq(dist.get(i, m));
            if d < d1[i] {
                d2[i] = d1[i];
                d1[i] = d;
                nearest[i] = c;
            } else if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    Assignment { nearest, d1, d2 }
}

/// BUILD: greedy forward selection of `k` medoids.
fn build_init(dist: &DistanceMatrix, k: usize) -> Vec<usize> {
    let n = dist.len();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    for _ in 0..k {
        let candidate_cost = |c: usize| -> (f64, usize) {
            if chosen.contains(&c) {
                return (f64::INFINITY, c);
            }
            let mut total = 0.0;
            for i in 0..n {
                total += nearest[i].min(sq(dist.get(i, c)));
            }
            (total, c)
        };
        let (_, best) = exec::min_by(n, candidate_cost, |a, b| {
            a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
        })
        .expect("n > 0");
        chosen.push(best);
        for i in 0..n {
            nearest[i] = nearest[i].min(sq(dist.get(i, best)));
        }
    }
    chosen
}

/// One SWAP sweep: finds the best exchange. Returns (delta, medoid slot,
/// candidate) when some swap strictly reduces the cost.
fn best_swap(dist: &DistanceMatrix, medoids: &[usize], a: &Assignment) -> Option<(f64, usize, usize)> {
    let n = dist.len();
    let k = medoids.len();
    // Per candidate o: delta(m) = removal_loss(m) + shared_gain, computed in
    // one pass over the points. This reproduces exactly the naive
    // sum-over-points delta of each (m, o) exchange.
    let eval = |o: usize| -> (f64, usize, usize) {
        if medoids.contains(&o) {
            return (f64::INFINITY, 0, o);
        }
        let mut delta = vec![0.0f64; k];
        let mut shared = 0.0f64;
        for i in 0..n {
            let d_io = sq(dist.get(i, o));
            let c = a.nearest[i];
            if d_io < a.d1[i] {
                // Point moves to o no matter which medoid leaves.
                shared += d_io - a.d1[i];
                // Unless its own medoid leaves: then it would have gone to
                // min(d_io, d2) anyway; correct the difference.
                delta[c] += a.d1[i].min(a.d2[i].min(d_io)) - d_io.min(a.d1[i]);
            } else {
                // Point keeps its distance unless its medoid leaves.
                delta[c] += d_io.min(a.d2[i]) - a.d1[i];
            }
        }
        let mut best = (f64::INFINITY, 0usize);
        for (m, d) in delta.iter().enumerate() {
            let total = d + shared;
            if total < best.0 {
                best = (total, m);
            }
        }
        (best.0, best.1, o)
    };
    let found = exec::min_by(n, eval, |x, y| {
        x.0 < y.0 || (x.0 == y.0 && (x.1, x.2) < (y.1, y.2))
    })?;
    // Strict decrease with a tolerance that ignores float dust, preventing
    // cycles between equal-cost configurations.
    if found.0 < -1e-9 {
        Some(found)
    } else {
        None
    }
}

fn swap_phase(dist: &DistanceMatrix, medoids: &mut Vec<usize>) -> (Assignment, Vec<f64>) {
    let mut a = assign(dist, medoids);
    let mut trace = vec![a.d1.iter().sum::<f64>()];
    while let Some((_, slot, o)) = best_swap(dist, medoids, &a) {
        medoids[slot] = o;
        a = assign(dist, medoids);
        let cost = a.d1.iter().sum::<f64>();
        debug_assert!(cost <= trace.last().unwrap() + 1e-9);
        trace.push(cost);
    }
    (a, trace)
}

fn model_from(
    templates: &[DailyTemplate],
    dist: &DistanceMatrix,
    mut medoids: Vec<usize>,
    seed: u64,
) -> PamModel {
    // Canonical order: ascending medoid index; reassign afterwards.
    medoids.sort_unstable();
    let a = assign(dist, &medoids);
    let mut sizes = vec![0usize; medoids.len()];
    for &c in &a.nearest {
        sizes[c] += 1;
    }
    PamModel {
        k: medoids.len(),
        medoids: medoids.iter().map(|&m| templates[m].clone()).collect(),
        medoid_indices: medoids,
        total_squared_cost: a.d1.iter().sum(),
        assignments: a.nearest,
        cluster_sizes: sizes,
        n_train: templates.len(),
        seed,
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    Ok(())
}

/// Fits PAM with BUILD + SWAP on a precomputed distance matrix.
pub fn fit_pam_on_matrix(
    templates: &[DailyTemplate],
    dist: &DistanceMatrix,
    k: usize,
    seed: u64,
) -> Result<PamModel> {
    check_k(templates.len(), k)?;
    let mut medoids = build_init(dist, k);
    let _ = swap_phase(dist, &mut medoids);
    Ok(model_from(templates, dist, medoids, seed))
}

/// Fits PAM with BUILD + SWAP, computing the pairwise DTW matrix first.
///
/// BUILD and SWAP are deterministic (ties break to the lowest index); the
/// seed is recorded for provenance and drives nothing here.
pub fn fit_pam(templates: &[DailyTemplate], k: usize, seed: u64) -> Result<PamModel> {
    let dist = dtw::pairwise_dtw_matrix(templates);
    fit_pam_on_matrix(templates, &dist, k, seed)
}

fn random_subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(k);
    idx
}

/// Internal: all starts for one k. Start 0 is BUILD; the rest are seeded
/// random subsets. Every start is refined by SWAP.
fn fit_starts(
    templates: &[DailyTemplate],
    dist: &DistanceMatrix,
    k: usize,
    inits: usize,
    seed: u64,
) -> (Vec<f64>, PamModel) {
    let n = templates.len();
    let mut costs = Vec::with_capacity(inits);
    let mut best: Option<PamModel> = None;
    for init in 0..inits {
        let mut medoids = if init == 0 {
            build_init(dist, k)
        } else {
            random_subset(n, k, exec::derive_seed(seed, &[k as u64, init as u64]))
        };
        let _ = swap_phase(dist, &mut medoids);
        let model = model_from(templates, dist, medoids, seed);
        costs.push(model.total_squared_cost);
        let better = match &best {
            None => true,
            Some(b) => model.total_squared_cost < b.total_squared_cost,
        };
        if better {
            best = Some(model);
        }
    }
    (costs, best.expect("inits > 0"))
}

/// Fits every k in `k_range` with `inits` starts each and picks the elbow of
/// the mean cost curve: the k with the largest discrete second difference
/// `c[k-1] - 2 c[k] + c[k+1]`, ties to the smaller k.
pub fn select_pam(
    templates: &[DailyTemplate],
    k_range: impl IntoIterator<Item = usize>,
    inits: usize,
    seed: u64,
) -> Result<PamSelection> {
    let ks: Vec<usize> = k_range.into_iter().collect();
    if ks.is_empty() {
        return Err(Error::InvalidArgument("empty k range".into()));
    }
    if inits == 0 {
        return Err(Error::InvalidArgument("inits must be positive".into()));
    }
    for &k in &ks {
        check_k(templates.len(), k)?;
    }
    let dist = dtw::pairwise_dtw_matrix(templates);

    let mut curve = Vec::with_capacity(ks.len());
    let mut models = Vec::with_capacity(ks.len());
    for &k in &ks {
        let (init_costs, model) = fit_starts(templates, &dist, k, inits, seed);
        let mean_cost = init_costs.iter().sum::<f64>() / init_costs.len() as f64;
        curve.push(PamCostPoint { k, mean_cost, init_costs });
        models.push(model);
    }

    let (chosen_idx, min_cost_fallback) = if ks.len() < 3 {
        log::warn!("k range shorter than 3; falling back to minimum-cost k");
        let mut best = 0;
        for (i, p) in curve.iter().enumerate() {
            if p.mean_cost < curve[best].mean_cost {
                best = i;
            }
        }
        (best, true)
    } else {
        let mut best = 1;
        let mut best_dd = f64::NEG_INFINITY;
        for i in 1..curve.len() - 1 {
            let dd = curve[i - 1].mean_cost - 2.0 * curve[i].mean_cost + curve[i + 1].mean_cost;
            if dd > best_dd {
                best_dd = dd;
                best = i;
            }
        }
        (best, false)
    };

    Ok(PamSelection {
        chosen_k: ks[chosen_idx],
        cost_curve: curve,
        min_cost_fallback,
        model: models.swap_remove(chosen_idx),
    })
}

/// Scores one day against a fitted model.
///
/// `prev` is the previous day's template when available; it feeds the
/// day-to-day change score.
pub fn score_day_pam(
    model: &PamModel,
    template: &DailyTemplate,
    prev: Option<&DailyTemplate>,
) -> PamDayScores {
    let hours = template.hour_major();
    let mut assigned = f64::INFINITY;
    let mut label = 0usize;
    let mut weighted = 0.0;
    for (c, medoid) in model.medoids.iter().enumerate() {
        let d = dtw::dtw_hours(&hours, &medoid.hour_major());
        if d < assigned {
            assigned = d;
            label = c;
        }
        weighted += model.cluster_sizes[c] as f64 / model.n_train as f64 * d;
    }
    PamDayScores {
        label: label + 1,
        assigned_distance: assigned,
        weighted_distance: weighted,
        dtw_prev_day: prev.map(|p| dtw::dtw_distance(template, p)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::N_HOURS;
    use chrono::NaiveDate;

    fn date() -> NaiveDate {
        "2023-01-01".parse().unwrap()
    }

    fn scalar_template(v: f64) -> DailyTemplate {
        // Constant series on channel 0; DTW distance between two such
        // templates is 24 * |a - b|.
        let mut t = DailyTemplate::empty(date());
        t.values[0] = vec![v; N_HOURS];
        t.missing.clear();
        t
    }

    fn templates_from(vals: &[f64]) -> Vec<DailyTemplate> {
        vals.iter().map(|&v| scalar_template(v)).collect()
    }

    #[test]
    fn k_equals_n_gives_zero_cost() {
        let templates = templates_from(&[0.0, 1.0, 2.0, 5.0]);
        let model = fit_pam(&templates, 4, 0).unwrap();
        assert_eq!(model.total_squared_cost, 0.0);
        assert_eq!(model.medoid_indices, vec![0, 1, 2, 3]);
        assert_eq!(model.cluster_sizes, vec![1, 1, 1, 1]);
    }

    #[test]
    fn two_tight_pairs_split_correctly() {
        // Points 0, 1, 10, 11 with k = 2: optimal clusters {0,1} and
        // {10,11}; each pair contributes 24^2 squared cost.
        let templates = templates_from(&[0.0, 1.0, 10.0, 11.0]);
        let model = fit_pam(&templates, 2, 0).unwrap();
        assert_eq!(model.assignments[0], model.assignments[1]);
        assert_eq!(model.assignments[2], model.assignments[3]);
        assert_ne!(model.assignments[0], model.assignments[2]);
        let unit = 24.0f64 * 24.0;
        assert!((model.total_squared_cost - 2.0 * unit).abs() < 1e-9);
    }

    fn brute_force_cost(dist: &DistanceMatrix, n: usize, k: usize) -> f64 {
        fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
            fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                if cur.len() == k {
                    out.push(cur.clone());
                    return;
                }
                for i in start..n {
                    cur.push(i);
                    go(i + 1, n, k, cur, out);
                    cur.pop();
                }
            }
            let mut out = Vec::new();
            go(0, n, k, &mut Vec::new(), &mut out);
            out
        }
        subsets(n, k)
            .into_iter()
            .map(|medoids| {
                (0..n)
                    .map(|i| {
                        medoids
                            .iter()
                            .map(|&m| sq(dist.get(i, m)))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .sum()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn never_beats_brute_force_and_usually_matches() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut exact = 0;
        let trials = 100;
        for trial in 0..trials {
            let n = rng.gen_range(4..=10);
            let k = rng.gen_range(1..=3.min(n));
            let vals: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 10.0).collect();
            let templates = templates_from(&vals);
            let dist = dtw::pairwise_dtw_matrix(&templates);
            let (costs, _) = fit_starts(&templates, &dist, k, 5, trial as u64);
            let best = costs.iter().cloned().fold(f64::INFINITY, f64::min);
            let optimum = brute_force_cost(&dist, n, k);
            assert!(
                best >= optimum - 1e-9,
                "PAM below brute force: {best} < {optimum}"
            );
            if (best - optimum).abs() <= 1e-9 {
                exact += 1;
            }
        }
        assert!(exact >= 90, "only {exact}/{trials} matched the optimum");
    }

    #[test]
    fn swap_trace_strictly_decreases() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..30).map(|_| rng.gen::<f64>() * 10.0).collect();
        let templates = templates_from(&vals);
        let dist = dtw::pairwise_dtw_matrix(&templates);
        // A poor deliberate start so SWAP has work to do.
        let mut medoids = vec![0, 1, 2];
        let (_, trace) = swap_phase(&dist, &mut medoids);
        for w in trace.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn assignments_point_to_nearest_medoid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let vals: Vec<f64> = (0..25).map(|_| rng.gen::<f64>() * 4.0).collect();
        let templates = templates_from(&vals);
        let model = fit_pam(&templates, 3, 0).unwrap();
        for (i, t) in templates.iter().enumerate() {
            let dists: Vec<f64> = model.medoids.iter().map(|m| dtw::dtw_distance(t, m)).collect();
            let nearest = dists
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap()
                .0;
            assert_eq!(model.assignments[i], nearest, "point {i}");
        }
        assert_eq!(model.cluster_sizes.iter().sum::<usize>(), 25);
    }

    #[test]
    fn elbow_picks_planted_cluster_count() {
        // Three tight groups; the cost curve kinks at k = 3.
        let mut vals = Vec::new();
        for center in [0.0, 5.0, 10.0] {
            for i in 0..6 {
                vals.push(center + i as f64 * 0.01);
            }
        }
        let templates = templates_from(&vals);
        let sel = select_pam(&templates, 2..=6, 3, 42).unwrap();
        assert_eq!(sel.chosen_k, 3);
        assert!(!sel.min_cost_fallback);
        // Curve is non-increasing for the best-of-starts fits here.
        for w in sel.cost_curve.windows(2) {
            assert!(w[1].mean_cost <= w[0].mean_cost + 1e-9);
        }
    }

    #[test]
    fn short_range_falls_back_to_min_cost() {
        let templates = templates_from(&[0.0, 0.1, 5.0, 5.1]);
        let sel = select_pam(&templates, [2, 3], 2, 0).unwrap();
        assert!(sel.min_cost_fallback);
        assert_eq!(sel.chosen_k, 3);
    }

    #[test]
    fn scoring_medoid_day_is_zero_distance() {
        let templates = templates_from(&[0.0, 1.0, 10.0, 11.0]);
        let model = fit_pam(&templates, 2, 0).unwrap();
        let medoid = &model.medoids[0];
        let s = score_day_pam(&model, medoid, None);
        assert_eq!(s.assigned_distance, 0.0);
        assert_eq!(s.label, 1);
        assert!(s.dtw_prev_day.is_none());
    }

    #[test]
    fn weighted_distance_is_size_weighted_mean() {
        // Clusters of size 3 and 1; day at distance 24*1 from medoid a and
        // 24*9 from medoid b: weighted = 0.75 * 24 + 0.25 * 216.
        let templates = templates_from(&[0.0, 0.2, -0.2, 10.0]);
        let model = fit_pam(&templates, 2, 0).unwrap();
        assert_eq!(model.cluster_sizes, vec![3, 1]);
        let day = scalar_template(1.0);
        let s = score_day_pam(&model, &day, Some(&scalar_template(0.5)));
        let d_a = 24.0 * 1.0;
        let d_b = 24.0 * 9.0;
        assert!((s.weighted_distance - (0.75 * d_a + 0.25 * d_b)).abs() < 1e-9);
        assert_eq!(s.assigned_distance, d_a);
        assert_eq!(s.label, 1);
        assert_eq!(s.dtw_prev_day, Some(12.0));
        // Convex combination over medoids dominates the minimum.
        assert!(s.weighted_distance >= s.assigned_distance);
    }
}
