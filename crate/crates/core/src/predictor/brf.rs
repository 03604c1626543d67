//! Balanced random forest: bootstraps each tree with equal class counts,
//! splits on Gini impurity over a fresh random ⌈√F⌉ feature subset per node.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::exec;
use crate::Result;

/// Forest size; small on purpose to keep the model compact.
pub const DEFAULT_N_TREES: usize = 11;

/// One tree node. Rows with `row[feature] <= threshold` descend left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        pos: usize,
        neg: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Arena-allocated nodes; index 0 is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Positive-class fraction of the leaf this row lands in.
    fn leaf_fraction(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { pos, neg } => return *pos as f64 / (*pos + *neg) as f64,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrfModel {
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// (positive, negative) bootstrap counts per tree; equal by construction.
    pub bootstrap_counts: Vec<(usize, usize)>,
    pub seed: u64,
}

impl BrfModel {
    /// Classify at the 0.5 probability threshold.
    pub fn predict(&self, row: &[f64]) -> bool {
        predict_proba(self, row) >= 0.5
    }
}

/// Fits the forest. Each tree draws a balanced bootstrap (m with replacement
/// from each class, m = minority count) and grows without a depth limit,
/// stopping at pure nodes, nodes below 2 samples, or nodes no split improves.
pub fn fit_brf(rows: &[Vec<f64>], labels: &[bool], n_trees: usize, seed: u64) -> Result<BrfModel> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no training rows".into()));
    }
    assert_eq!(rows.len(), labels.len());
    let n_features = rows[0].len();
    assert!(rows.iter().all(|r| r.len() == n_features), "ragged feature rows");
    let pos: Vec<usize> = (0..rows.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..rows.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    let m = pos.len().min(neg.len());

    let mut trees = Vec::with_capacity(n_trees);
    let mut bootstrap_counts = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(seed, &[t as u64]));
        let mut boot: Vec<usize> = Vec::with_capacity(2 * m);
        for _ in 0..m {
            boot.push(pos[rng.gen_range(0..pos.len())]);
        }
        for _ in 0..m {
            boot.push(neg[rng.gen_range(0..neg.len())]);
        }
        bootstrap_counts.push((m, m));
        let mut nodes = Vec::new();
        let idx: Vec<usize> = (0..boot.len()).collect();
        grow(rows, labels, &boot, idx, &mut rng, &mut nodes);
        trees.push(Tree { nodes });
    }
    Ok(BrfModel { n_features, trees, bootstrap_counts, seed })
}

/// Mean over trees of the leaf positive-class fraction.
pub fn predict_proba(model: &BrfModel, row: &[f64]) -> f64 {
    assert_eq!(row.len(), model.n_features, "feature dimension mismatch");
    let sum: f64 = model.trees.iter().map(|t| t.leaf_fraction(row)).sum();
    sum / model.trees.len() as f64
}

fn gini(pos: f64, neg: f64) -> f64 {
    let n = pos + neg;
    if n == 0.0 {
        0.0
    } else {
        1.0 - (pos * pos + neg * neg) / (n * n)
    }
}

/// Grows a subtree over `idx` (indices into `boot`), returns its arena slot.
fn grow(
    rows: &[Vec<f64>],
    labels: &[bool],
    boot: &[usize],
    idx: Vec<usize>,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let pos = idx.iter().filter(|&&i| labels[boot[i]]).count();
    let neg = idx.len() - pos;
    let slot = nodes.len();
    if pos == 0 || neg == 0 || idx.len() < 2 {
        nodes.push(Node::Leaf { pos, neg });
        return slot;
    }

    let n_features = rows[0].len();
    let n_sub = ((n_features as f64).sqrt().ceil() as usize).clamp(1, n_features);
    let mut candidates: Vec<usize> =
        rand::seq::index::sample(rng, n_features, n_sub).into_iter().collect();
    candidates.sort_unstable();

    let parent = gini(pos as f64, neg as f64);
    let n = idx.len() as f64;
    let mut best: Option<(f64, usize, f64)> = None; // (decrease, feature, threshold)
    for &f in &candidates {
        let mut points: Vec<(f64, bool)> =
            idx.iter().map(|&i| (rows[boot[i]][f], labels[boot[i]])).collect();
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut left_pos = 0.0;
        let mut left_n = 0.0;
        for w in 0..points.len() - 1 {
            left_n += 1.0;
            if points[w].1 {
                left_pos += 1.0;
            }
            if points[w].0 == points[w + 1].0 {
                continue;
            }
            let threshold = 0.5 * (points[w].0 + points[w + 1].0);
            let right_n = n - left_n;
            let right_pos = pos as f64 - left_pos;
            let decrease = parent
                - left_n / n * gini(left_pos, left_n - left_pos)
                - right_n / n * gini(right_pos, right_n - right_pos);
            if best.is_none_or(|(d, _, _)| decrease > d) {
                best = Some((decrease, f, threshold));
            }
        }
    }

    match best {
        Some((decrease, feature, threshold)) if decrease > 0.0 => {
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                idx.into_iter().partition(|&i| rows[boot[i]][feature] <= threshold);
            nodes.push(Node::Leaf { pos: 0, neg: 0 }); // placeholder
            let left = grow(rows, labels, boot, left_idx, rng, nodes);
            let right = grow(rows, labels, boot, right_idx, rng, nodes);
            nodes[slot] = Node::Split { feature, threshold, left, right };
        }
        // No candidate split separates anything (duplicate rows with mixed
        // labels, or unlucky feature subset): keep an impure leaf.
        _ => nodes.push(Node::Leaf { pos, neg }),
    }
    slot
}
