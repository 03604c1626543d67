//! Statistical checks used by calibration tests and cluster-recovery
//! diagnostics.

/// Kolmogorov–Smirnov distance between a sample and Uniform(0,1).
///
/// Returns the supremum distance between the empirical CDF and the identity
/// on [0,1]. Values outside [0,1] are clamped first.
pub fn ks_distance_uniform(sample: &[f64]) -> f64 {
    assert!(!sample.is_empty(), "KS distance of an empty sample");
    let mut s: Vec<f64> = sample.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, u) in s.iter().enumerate() {
        // The empirical CDF jumps from i/n to (i+1)/n at u.
        sup = sup.max(u - i as f64 / n).max((i + 1) as f64 / n - u);
    }
    sup
}

/// Adjusted Rand index between two labelings of the same points.
///
/// 1 means identical partitions (up to relabeling), 0 is the chance level,
/// negative values are worse than chance.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same points");
    assert!(!a.is_empty(), "ARI of an empty labeling");
    let n = a.len();
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1) / 2) as f64;
    let sum_ij: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let sum_a: f64 = table.iter().map(|row| c2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb)
        .map(|j| c2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = c2(n as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        // Both partitions are trivial (e.g. a single cluster each).
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}
