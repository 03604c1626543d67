//! Principal component analysis of flattened daily templates via
//! eigendecomposition of the sample covariance matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cap on the default number of retained components.
pub const DEFAULT_MAX_COMPONENTS: usize = 200;

/// Fitted PCA basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// Feature means, length = input dimension.
    pub mean: Vec<f64>,
    /// Orthonormal components, one row per component, sorted by descending
    /// explained variance.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalue (variance along each retained component).
    pub explained_variance: Vec<f64>,
    /// Fraction of total variance per retained component, non-increasing.
    pub explained_variance_ratio: Vec<f64>,
    /// Trace of the covariance matrix (total variance).
    pub total_variance: f64,
    /// Numerical rank of the training covariance.
    pub rank: usize,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Fits PCA on row-major data (`rows[i]` is one flattened template).
///
/// `n_components = None` retains `min(200, rank)` components. Requesting
/// more components than the numerical rank is an error that reports the
/// achievable rank.
pub fn fit_pca(rows: &[Vec<f64>], n_components: Option<usize>) -> Result<PcaModel> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::EmptyInput("PCA needs at least two rows".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("ragged PCA input".into()));
    }

    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // Sample covariance, n - 1 denominator.
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let total_variance = cov.trace();

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .collect();
    let lambda_max = eigenvalues.first().copied().unwrap_or(0.0);
    let tol = lambda_max * d as f64 * f64::EPSILON;
    let rank = eigenvalues.iter().filter(|&&l| l > tol).count();

    let q = match n_components {
        Some(q) => {
            if q == 0 {
                return Err(Error::InvalidArgument("n_components must be positive".into()));
            }
            if q > rank {
                return Err(Error::RankDeficient { requested: q, achievable: rank });
            }
            q
        }
        None => rank.min(DEFAULT_MAX_COMPONENTS),
    };

    let mut components = Vec::with_capacity(q);
    for &i in order.iter().take(q) {
        let col = eig.eigenvectors.column(i);
        let mut v: Vec<f64> = col.iter().copied().collect();
        // Canonical sign: the entry of largest magnitude is positive.
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        if v[pivot] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        components.push(v);
    }

    let explained_variance: Vec<f64> = eigenvalues[..q].to_vec();
    let explained_variance_ratio = if total_variance > 0.0 {
        explained_variance.iter().map(|l| l / total_variance).collect()
    } else {
        vec![0.0; q]
    };

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        explained_variance_ratio,
        total_variance,
        rank,
    })
}

/// Projects one flattened template onto the retained components.
pub fn project(model: &PcaModel, flat: &[f64]) -> Vec<f64> {
    assert_eq!(flat.len(), model.dim(), "dimension mismatch");
    let centered = DVector::from_fn(model.dim(), |i, _| flat[i] - model.mean[i]);
    model
        .components
        .iter()
        .map(|c| c.iter().zip(centered.iter()).map(|(a, b)| a * b).sum())
        .collect()
}

/// Reconstructs a flattened template from its projection (used by tests and
/// diagnostics).
pub fn reconstruct(model: &PcaModel, coords: &[f64]) -> Vec<f64> {
    assert_eq!(coords.len(), model.n_components());
    let mut out = model.mean.clone();
    for (c, &w) in model.components.iter().zip(coords) {
        for (o, &ci) in out.iter_mut().zip(c) {
            *o += w * ci;
        }
    }
    out
}
