//! Dynamic time warping over 24-step daily templates.
//!
//! Dependent multivariate DTW: the local cost between hour `i` of one day
//! and hour `j` of another is the Euclidean norm across all 21 modality
//! channels, and the usual dynamic program accumulates
//!
//! ```text
//! D(i, j) = c(i, j) + min(D(i-1, j), D(i, j-1), D(i-1, j-1))
//! ```
//!
//! with no window constraint and no length normalization. The distance is
//! `D(23, 23)`.

use crate::exec;
use crate::registry::{N_HOURS, N_MODALITIES};
use crate::template::DailyTemplate;

/// DTW under an arbitrary local cost on index pairs, for `n x m` series.
///
/// This is the reference recurrence; the template kernel below is the same
/// program specialized to 24 x 24 with a Euclidean local cost.
pub fn dtw_generic(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> f64 {
    assert!(n > 0 && m > 0, "series must be non-empty");
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for j in 0..m {
        prev[j] = cost(0, j) + if j == 0 { 0.0 } else { prev[j - 1] };
    }
    for i in 1..n {
        cur[0] = cost(i, 0) + prev[0];
        for j in 1..m {
            let best = prev[j].min(prev[j - 1]).min(cur[j - 1]);
            cur[j] = cost(i, j) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// DTW between univariate series under absolute-difference local cost.
pub fn dtw_abs(a: &[f64], b: &[f64]) -> f64 {
    dtw_generic(a.len(), b.len(), |i, j| (a[i] - b[j]).abs())
}

/// Hour-major template values, the layout the kernel consumes.
pub type HourMajor = [[f64; N_MODALITIES]; N_HOURS];

#[inline]
fn euclid(a: &[f64; N_MODALITIES], b: &[f64; N_MODALITIES]) -> f64 {
    let mut acc = 0.0;
    for m in 0..N_MODALITIES {
        let d = a[m] - b[m];
        acc += d * d;
    }
    acc.sqrt()
}

/// DTW between two hour-major templates.
pub fn dtw_hours(a: &HourMajor, b: &HourMajor) -> f64 {
    let mut prev = [0.0f64; N_HOURS];
    let mut cur = [0.0f64; N_HOURS];
    let mut acc = 0.0;
    for j in 0..N_HOURS {
        acc += euclid(&a[0], &b[j]);
        prev[j] = acc;
    }
    for i in 1..N_HOURS {
        cur[0] = euclid(&a[i], &b[0]) + prev[0];
        for j in 1..N_HOURS {
            let best = prev[j].min(prev[j - 1]).min(cur[j - 1]);
            cur[j] = euclid(&a[i], &b[j]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[N_HOURS - 1]
}

/// DTW distance between two daily templates (masked cells participate as
/// their stored zeros).
pub fn dtw_distance(a: &DailyTemplate, b: &DailyTemplate) -> f64 {
    dtw_hours(&a.hour_major(), &b.hour_major())
}

/// Symmetric distance matrix stored as a packed upper triangle including the
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    packed: Vec<f64>,
}

impl DistanceMatrix {
    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        // Row i starts after rows 0..i, which hold n, n-1, ... entries.
        debug_assert!(i <= j && j < self.n);
        i * self.n - i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.packed[self.offset(i, j)]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Builds a matrix by evaluating `f(i, j)` for `i <= j`.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                packed.push(f(i, j));
            }
        }
        Self { n, packed }
    }
}

fn hour_major_all(templates: &[DailyTemplate]) -> Vec<HourMajor> {
    templates.iter().map(DailyTemplate::hour_major).collect()
}

fn pairwise_rows(hours: &[HourMajor], parallel: bool) -> DistanceMatrix {
    let n = hours.len();
    let row = |i: usize| -> Vec<f64> {
        let mut r = Vec::with_capacity(n - i);
        r.push(0.0);
        for j in i + 1..n {
            r.push(dtw_hours(&hours[i], &hours[j]));
        }
        r
    };
    let rows = if parallel {
        exec::map_indices(n, row)
    } else {
        exec::map_indices_seq(n, row)
    };
    let mut packed = Vec::with_capacity(n * (n + 1) / 2);
    for r in rows {
        packed.extend(r);
    }
    DistanceMatrix { n, packed }
}

/// Full pairwise DTW matrix over a set of templates. Zero diagonal,
/// symmetric by construction; each pair is computed once.
pub fn pairwise_dtw_matrix(templates: &[DailyTemplate]) -> DistanceMatrix {
    pairwise_rows(&hour_major_all(templates), true)
}

/// Sequential twin of [`pairwise_dtw_matrix`] for the benchmark suite and
/// determinism checks.
pub fn pairwise_dtw_matrix_seq(templates: &[DailyTemplate]) -> DistanceMatrix {
    pairwise_rows(&hour_major_all(templates), false)
}
