//! Equal-width feature quantization into one-hot bin indicators.

use serde::{Deserialize, Serialize};

/// Bin layout for one kept feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub name: String,
    /// Column of the feature in the raw row the quantizer was fit on.
    pub column: usize,
    pub min: f64,
    pub max: f64,
}

/// Equal-width quantizer fit on training values. Features whose training
/// range collapses to a point are dropped from the expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub n_bins: usize,
    pub kept: Vec<BinSpec>,
    pub dropped: Vec<String>,
}

impl QuantizerSpec {
    /// Length of an expanded vector.
    pub fn expanded_len(&self) -> usize {
        self.kept.len() * self.n_bins
    }
}

/// Fits per-feature equal-width edges over the training rows' [min, max].
/// `names` labels the columns of `rows`.
pub fn fit_quantizer(names: &[String], rows: &[Vec<f64>], n_bins: usize) -> QuantizerSpec {
    assert!(n_bins >= 2, "need at least two bins");
    assert!(!rows.is_empty(), "cannot fit a quantizer on zero rows");
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in rows {
            lo = lo.min(row[c]);
            hi = hi.max(row[c]);
        }
        if lo == hi {
            log::debug!("quantizer drops constant feature {name:?} (value {lo})");
            dropped.push(name.clone());
        } else {
            kept.push(BinSpec { name: name.clone(), column: c, min: lo, max: hi });
        }
    }
    QuantizerSpec { n_bins, kept, dropped }
}

/// Expands one raw row into concatenated one-hot bin counts. Out-of-range
/// values clip to the edge bins; a value equal to the training max lands in
/// the last bin. Each feature's block sums to exactly 1.
pub fn quantize(spec: &QuantizerSpec, row: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; spec.expanded_len()];
    for (f, bin) in spec.kept.iter().enumerate() {
        let v = row[bin.column];
        let width = (bin.max - bin.min) / spec.n_bins as f64;
        let idx = if v <= bin.min {
            0
        } else if v >= bin.max {
            spec.n_bins - 1
        } else {
            (((v - bin.min) / width) as usize).min(spec.n_bins - 1)
        };
        out[f * spec.n_bins + idx] = 1.0;
    }
    out
}
