//! Execution helpers for the data-parallel batch loops.
//!
//! With the `parallel` feature (default) the maps below fan out over rayon's
//! global pool; without it they run sequentially. Callers only ever use
//! order-preserving map/collect shapes: each work item is computed
//! independently and combined in index order afterwards, so results are
//! bitwise identical regardless of thread count or feature selection.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of [`map_indices`], kept unconditionally compiled so the
/// benchmark suite can compare both paths under one build.
pub fn map_indices_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, returning results in input order.
pub fn map_slice<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&'a T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Selects the minimum of `f(i)` for `i in 0..n` under a strict total order
/// supplied by `better`. `better(a, b)` must return true iff `a` should
/// replace `b`; ties must be broken by index inside the returned values, so
/// the reduction is associative and thread-schedule independent.
pub fn min_by<U, F, B>(n: usize, f: F, better: B) -> Option<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
    B: Fn(&U, &U) -> bool + Sync + Send,
{
    let pick = |a: U, b: U| if better(&b, &a) { b } else { a };
    #[cfg(feature = "parallel")]
    {
        (0..n)
            .into_par_iter()
            .map(f)
            .reduce_with(pick)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).reduce(pick)
    }
}

/// Derives an independent stream seed from a root seed and a path of work
/// unit identifiers (e.g. `[k, init]` or `[patient, day]`).
///
/// Every randomized work unit seeds its own generator from the result, so
/// scheduling and batch splits never change what a unit draws. The mixer is
/// SplitMix64 applied to the running state xor each path element.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut state = mix(root);
    for &p in path {
        state = mix(state ^ p);
    }
    state
}
