//! Gaussian mixture fitting, model selection, and day scoring.
//!
//! Mixtures are fit by EM with four covariance parameterizations. Candidate
//! models (one per k × covariance type, best of several restarts) are
//! compared by AIC and BIC; candidates within 2% of both bests form a
//! shortlist, and the shortlist member with the largest mean pairwise
//! Bhattacharyya distance wins, ties to the smaller k and then the simpler
//! covariance type.
//!
//! A day's conformity scores come from the chi-squared tail of its squared
//! Mahalanobis distance: with q embedding dimensions, d² to a component is
//! chi-squared with q degrees of freedom under that component, so the
//! survival value is a p-value-like score in [0,1] that is uniform for days
//! drawn from the component itself.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::{Error, Result};

/// Diagonal regularization added to every covariance in the M-step.
pub const DEFAULT_REG: f64 = 1e-6;
/// Default candidate cluster counts for selection.
pub const DEFAULT_K_RANGE: std::ops::RangeInclusive<usize> = 5..=20;
/// Default restarts per candidate.
pub const DEFAULT_RESTARTS: usize = 5;

/// Covariance parameterization, simplest first; the declaration order is
/// the tie-break order during selection.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceType {
    Spherical,
    Tied,
    Diagonal,
    Full,
}

impl CovarianceType {
    pub const ALL: [CovarianceType; 4] = [
        CovarianceType::Spherical,
        CovarianceType::Tied,
        CovarianceType::Diagonal,
        CovarianceType::Full,
    ];

    /// Free parameters contributed by the covariances alone.
    pub fn n_cov_params(self, k: usize, q: usize) -> usize {
        match self {
            CovarianceType::Spherical => k,
            CovarianceType::Tied => q * (q + 1) / 2,
            CovarianceType::Diagonal => k * q,
            CovarianceType::Full => k * q * (q + 1) / 2,
        }
    }
}

impl std::fmt::Display for CovarianceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CovarianceType::Spherical => "spherical",
            CovarianceType::Tied => "tied",
            CovarianceType::Diagonal => "diagonal",
            CovarianceType::Full => "full",
        };
        f.write_str(s)
    }
}

/// Covariance storage matching the parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariances {
    /// One variance per component.
    Spherical(Vec<f64>),
    /// One shared q×q matrix (rows).
    Tied(Vec<Vec<f64>>),
    /// Per-component q-vector of variances.
    Diagonal(Vec<Vec<f64>>),
    /// Per-component q×q matrix (rows).
    Full(Vec<Vec<Vec<f64>>>),
}

/// Fitted Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    /// Embedding dimension; also the chi-squared degrees of freedom used by
    /// the day scores.
    pub q: usize,
    pub cov_type: CovarianceType,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Covariances,
    /// Final total log-likelihood of the training data.
    pub log_likelihood: f64,
    /// Log-likelihood after every EM iteration.
    pub ll_trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    /// Components re-seeded after their responsibility mass underflowed.
    pub reseed_events: usize,
    pub n_train: usize,
    pub seed: u64,
}

/// Per-day conformity scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDayScores {
    /// 1-based component label, argmax of the posterior.
    pub label: usize,
    /// Chi-squared survival of d² to the labeled component.
    pub assigned_likelihood: f64,
    /// Weight-averaged survival over all components.
    pub weighted_likelihood: f64,
}

/// One candidate in the selection grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmCandidate {
    pub k: usize,
    pub cov_type: CovarianceType,
    pub aic: f64,
    pub bic: f64,
    pub bhattacharyya: f64,
    pub restart_log_likelihoods: Vec<f64>,
    pub shortlisted: bool,
    pub chosen: bool,
}

/// Outcome of the model-selection sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSelectionReport {
    pub candidates: Vec<GmmCandidate>,
    pub chosen_k: usize,
    pub chosen_cov: CovarianceType,
}

/// EM fitting knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Relative log-likelihood change that stops iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Diagonal regularization added in every M-step.
    pub reg: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { tol: 1e-6, max_iter: 200, reg: DEFAULT_REG }
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Survival function of the chi-squared distribution with `dof` degrees of
/// freedom.
pub fn chi_squared_survival(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    statrs::function::gamma::gamma_ur(dof as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

fn check_data(data: &[Vec<f64>]) -> Result<usize> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyInput("gmm training data".into()));
    }
    let q = data[0].len();
    if q == 0 {
        return Err(Error::EmptyInput("zero-dimensional gmm data".into()));
    }
    for row in data {
        if row.len() != q {
            return Err(Error::InvalidArgument("ragged gmm data".into()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite gmm data".into()));
        }
    }
    Ok(q)
}

fn sq_euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Farthest-point initial means: the first is one uniformly random data
/// point; each next one is the point at maximum distance from its nearest
/// already-chosen centroid.
pub fn init_centroids_farthest(data: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    use rand::{Rng, SeedableRng};
    let n = data.len();
    check_data(data)?;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={n} for farthest-point init"
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = data.iter().map(|p| sq_euclid(p, &data[first])).collect();
    while chosen.len() < k {
        let mut best = 0usize;
        for i in 1..n {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        chosen.push(best);
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_euclid(&data[i], &data[best]));
        }
    }
    Ok(chosen.into_iter().map(|i| data[i].clone()).collect())
}

/// Lower Cholesky factor with escalating diagonal jitter. Returns the
/// factor and ln det of the (jittered) matrix.
fn cholesky_jitter(mat: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let q = mat.nrows();
    let scale = (mat.diagonal().sum() / q as f64).max(f64::MIN_POSITIVE);
    for &factor in &[0.0, 1e-12, 1e-9, 1e-6, 1e-3] {
        let mut m = mat.clone();
        for i in 0..q {
            m[(i, i)] += factor * scale;
        }
        if let Some(chol) = nalgebra::linalg::Cholesky::new(m) {
            let l = chol.unpack();
            let log_det = 2.0 * (0..q).map(|i| l[(i, i)].ln()).sum::<f64>();
            return Ok((l, log_det));
        }
    }
    Err(Error::SingularCovariance { component: usize::MAX })
}

/// z := L⁻¹ v by forward substitution; returns ‖z‖².
fn solve_norm_sq(l: &DMatrix<f64>, v: &mut [f64]) -> f64 {
    let q = v.len();
    for i in 0..q {
        let mut s = v[i];
        for j in 0..i {
            s -= l[(i, j)] * v[j];
        }
        v[i] = s / l[(i, i)];
    }
    v.iter().map(|z| z * z).sum()
}

/// Precision data for one fitted mixture, reused across many days.
enum Precision {
    /// Inverse variance and ln det per component.
    Spherical(Vec<f64>),
    /// Inverse variances per component.
    Diagonal(Vec<Vec<f64>>),
    /// Shared Cholesky factor and ln det.
    Tied(Box<DMatrix<f64>>, f64),
    /// Per-component factors and ln dets.
    Full(Vec<(DMatrix<f64>, f64)>),
}

/// Scoring handle: per-component precision factors computed once.
pub struct GmmScorer<'m> {
    model: &'m GmmModel,
    prec: Precision,
}

impl GmmModel {
    /// Materializes component `j`'s covariance as a dense matrix.
    pub fn covariance_matrix(&self, j: usize) -> DMatrix<f64> {
        let q = self.q;
        match &self.covariances {
            Covariances::Spherical(vars) => DMatrix::identity(q, q) * vars[j],
            Covariances::Diagonal(vars) => {
                DMatrix::from_fn(q, q, |r, c| if r == c { vars[j][r] } else { 0.0 })
            }
            Covariances::Tied(rows) => DMatrix::from_fn(q, q, |r, c| rows[r][c]),
            Covariances::Full(all) => DMatrix::from_fn(q, q, |r, c| all[j][r][c]),
        }
    }

    /// Builds the scoring handle (factors each covariance once).
    pub fn scorer(&self) -> Result<GmmScorer<'_>> {
        let prec = match &self.covariances {
            Covariances::Spherical(vars) => Precision::Spherical(
                vars.iter().map(|&v| 1.0 / v).collect(),
            ),
            Covariances::Diagonal(vars) => Precision::Diagonal(
                vars.iter()
                    .map(|row| row.iter().map(|&v| 1.0 / v).collect())
                    .collect(),
            ),
            Covariances::Tied(_) => {
                let (l, ld) = cholesky_jitter(&self.covariance_matrix(0))?;
                Precision::Tied(Box::new(l), ld)
            }
            Covariances::Full(_) => {
                let factors = (0..self.k)
                    .map(|j| {
                        cholesky_jitter(&self.covariance_matrix(j)).map_err(|_| {
                            Error::SingularCovariance { component: j }
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Precision::Full(factors)
            }
        };
        Ok(GmmScorer { model: self, prec })
    }

    /// Draws `n` points from the mixture.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        use rand::distributions::{Distribution, WeightedIndex};
        use rand::SeedableRng;
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let comp_dist = WeightedIndex::new(&self.weights)
            .map_err(|e| Error::InvalidArgument(format!("invalid mixture weights: {e}")))?;
        let factors: Vec<DMatrix<f64>> = (0..self.k)
            .map(|j| cholesky_jitter(&self.covariance_matrix(j)).map(|(l, _)| l))
            .collect::<Result<Vec<_>>>()?;
        let q = self.q;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let j = comp_dist.sample(&mut rng);
            let z: Vec<f64> = (0..q).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut x = self.means[j].clone();
            let l = &factors[j];
            for r in 0..q {
                let mut s = 0.0;
                for c in 0..=r {
                    s += l[(r, c)] * z[c];
                }
                x[r] += s;
            }
            out.push(x);
        }
        Ok(out)
    }
}

impl GmmScorer<'_> {
    /// Squared Mahalanobis distance from `day` to component `j`.
    pub fn mahalanobis_sq(&self, j: usize, day: &[f64]) -> f64 {
        let mu = &self.model.means[j];
        match &self.prec {
            Precision::Spherical(inv) => sq_euclid(day, mu) * inv[j],
            Precision::Diagonal(inv) => day
                .iter()
                .zip(mu)
                .zip(&inv[j])
                .map(|((x, m), p)| (x - m) * (x - m) * p)
                .sum(),
            Precision::Tied(l, _) => {
                let mut v: Vec<f64> = day.iter().zip(mu).map(|(x, m)| x - m).collect();
                solve_norm_sq(l, &mut v)
            }
            Precision::Full(factors) => {
                let mut v: Vec<f64> = day.iter().zip(mu).map(|(x, m)| x - m).collect();
                solve_norm_sq(&factors[j].0, &mut v)
            }
        }
        .max(0.0)
    }

    fn log_det(&self, j: usize) -> f64 {
        let q = self.model.q as f64;
        match &self.prec {
            Precision::Spherical(inv) => -q * inv[j].ln(),
            Precision::Diagonal(inv) => -inv[j].iter().map(|p| p.ln()).sum::<f64>(),
            Precision::Tied(_, ld) => *ld,
            Precision::Full(factors) => factors[j].1,
        }
    }

    /// ln N(day; μ_j, Σ_j).
    pub fn log_component_density(&self, j: usize, day: &[f64]) -> f64 {
        -0.5 * (self.model.q as f64 * LN_2PI + self.log_det(j) + self.mahalanobis_sq(j, day))
    }

    /// Scores one embedded day.
    pub fn score_day(&self, day: &[f64]) -> GmmDayScores {
        let m = self.model;
        let mut label = 0usize;
        let mut best_post = f64::NEG_INFINITY;
        let mut weighted = 0.0;
        let mut assigned = 1.0;
        for j in 0..m.k {
            let d2 = self.mahalanobis_sq(j, day);
            let post = m.weights[j].ln() + self.log_component_density(j, day);
            let s = chi_squared_survival(d2, m.q);
            weighted += m.weights[j] * s;
            if post > best_post {
                best_post = post;
                label = j;
                assigned = s;
            }
        }
        GmmDayScores {
            label: label + 1,
            assigned_likelihood: assigned,
            weighted_likelihood: weighted.clamp(0.0, 1.0),
        }
    }
}

/// Scores one day against a fitted model. Batch callers should build a
/// [`GmmModel::scorer`] once instead.
pub fn score_day_gmm(model: &GmmModel, day: &[f64]) -> Result<GmmDayScores> {
    Ok(model.scorer()?.score_day(day))
}

/// Free-parameter count: (k−1) mixture weights, k·q mean entries, plus the
/// covariance parameters of the chosen type.
pub fn n_params(k: usize, q: usize, cov_type: CovarianceType) -> usize {
    (k - 1) + k * q + cov_type.n_cov_params(k, q)
}

/// AIC and BIC from a parameter count, a total log-likelihood, and the
/// training size.
pub fn criteria_from_parts(m: usize, log_likelihood: f64, n: f64) -> (f64, f64) {
    let m = m as f64;
    (2.0 * m - 2.0 * log_likelihood, m * n.ln() - 2.0 * log_likelihood)
}

/// (AIC, BIC) of a fitted model trained on `n` points.
pub fn information_criteria(model: &GmmModel, n: f64) -> (f64, f64) {
    criteria_from_parts(
        n_params(model.k, model.q, model.cov_type),
        model.log_likelihood,
        n,
    )
}

/// Mean Bhattacharyya distance over all unordered component pairs.
pub fn mean_pairwise_bhattacharyya(model: &GmmModel) -> Result<f64> {
    if model.k < 2 {
        return Err(Error::InvalidArgument(
            "pairwise Bhattacharyya needs at least two components".into(),
        ));
    }
    let q = model.q;
    let covs: Vec<DMatrix<f64>> = (0..model.k).map(|j| model.covariance_matrix(j)).collect();
    let log_dets: Vec<f64> = covs
        .iter()
        .map(|c| cholesky_jitter(c).map(|(_, ld)| ld))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..model.k {
        for j in i + 1..model.k {
            let mixed = (&covs[i] + &covs[j]) * 0.5;
            let (l, log_det_mixed) = cholesky_jitter(&mixed)?;
            let mut d: Vec<f64> = model.means[i]
                .iter()
                .zip(&model.means[j])
                .map(|(a, b)| a - b)
                .collect();
            let maha = solve_norm_sq(&l, &mut d).max(0.0);
            total += 0.125 * maha + 0.5 * (log_det_mixed - 0.5 * (log_dets[i] + log_dets[j]));
            pairs += 1;
        }
    }
    let _ = q;
    Ok(total / pairs as f64)
}

/// Mutable fitting state.
struct FitState {
    n: usize,
    q: usize,
    k: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Covariances,
    reseeds: usize,
}

impl FitState {
    fn as_model(&self, cov_type: CovarianceType, seed: u64) -> GmmModel {
        GmmModel {
            k: self.k,
            q: self.q,
            cov_type,
            weights: self.weights.clone(),
            means: self.means.clone(),
            covariances: self.covariances.clone(),
            log_likelihood: f64::NAN,
            ll_trace: Vec::new(),
            n_iter: 0,
            converged: false,
            reseed_events: self.reseeds,
            n_train: self.n,
            seed,
        }
    }

    /// M-step from responsibilities (`resp[i*k + j]`, rows summing to 1).
    fn m_step(&mut self, data: &[Vec<f64>], resp: &[f64], reg: f64) {
        let (n, q, k) = (self.n, self.q, self.k);
        let mut mass = vec![0.0f64; k];
        for i in 0..n {
            for j in 0..k {
                mass[j] += resp[i * k + j];
            }
        }
        for j in 0..k {
            self.weights[j] = mass[j] / n as f64;
        }
        // Kill accumulated rounding so the weights sum to 1 exactly.
        let wsum: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= wsum;
        }

        for j in 0..k {
            let mu = &mut self.means[j];
            mu.iter_mut().for_each(|v| *v = 0.0);
            for (i, x) in data.iter().enumerate() {
                let r = resp[i * k + j];
                for d in 0..q {
                    mu[d] += r * x[d];
                }
            }
            mu.iter_mut().for_each(|v| *v /= mass[j]);
        }

        match &mut self.covariances {
            Covariances::Spherical(vars) => {
                for j in 0..k {
                    let mu = &self.means[j];
                    let mut acc = 0.0;
                    for (i, x) in data.iter().enumerate() {
                        acc += resp[i * k + j] * sq_euclid(x, mu);
                    }
                    vars[j] = acc / (mass[j] * q as f64) + reg;
                }
            }
            Covariances::Diagonal(vars) => {
                for j in 0..k {
                    let mu = &self.means[j];
                    let row = &mut vars[j];
                    row.iter_mut().for_each(|v| *v = 0.0);
                    for (i, x) in data.iter().enumerate() {
                        let r = resp[i * k + j];
                        for d in 0..q {
                            let v = x[d] - mu[d];
                            row[d] += r * v * v;
                        }
                    }
                    row.iter_mut().for_each(|v| *v = *v / mass[j] + reg);
                }
            }
            Covariances::Tied(rows) => {
                let mut acc = vec![vec![0.0f64; q]; q];
                let mut v = vec![0.0f64; q];
                for (i, x) in data.iter().enumerate() {
                    for j in 0..k {
                        let r = resp[i * k + j];
                        let mu = &self.means[j];
                        for d in 0..q {
                            v[d] = x[d] - mu[d];
                        }
                        for a in 0..q {
                            let rv = r * v[a];
                            for b in a..q {
                                acc[a][b] += rv * v[b];
                            }
                        }
                    }
                }
                for a in 0..q {
                    for b in a..q {
                        let val = acc[a][b] / n as f64;
                        rows[a][b] = val + if a == b { reg } else { 0.0 };
                        rows[b][a] = rows[a][b];
                    }
                }
            }
            Covariances::Full(all) => {
                let mut v = vec![0.0f64; q];
                for j in 0..k {
                    let mu = &self.means[j];
                    let acc = &mut all[j];
                    acc.iter_mut().for_each(|row| row.iter_mut().for_each(|x| *x = 0.0));
                    for (i, x) in data.iter().enumerate() {
                        let r = resp[i * k + j];
                        for d in 0..q {
                            v[d] = x[d] - mu[d];
                        }
                        for a in 0..q {
                            let rv = r * v[a];
                            for b in a..q {
                                acc[a][b] += rv * v[b];
                            }
                        }
                    }
                    for a in 0..q {
                        for b in a..q {
                            let val = acc[a][b] / mass[j] + if a == b { reg } else { 0.0 };
                            acc[a][b] = val;
                            acc[b][a] = val;
                        }
                    }
                }
            }
        }
    }
}

fn empty_covariances(cov_type: CovarianceType, k: usize, q: usize) -> Covariances {
    match cov_type {
        CovarianceType::Spherical => Covariances::Spherical(vec![0.0; k]),
        CovarianceType::Tied => Covariances::Tied(vec![vec![0.0; q]; q]),
        CovarianceType::Diagonal => Covariances::Diagonal(vec![vec![0.0; q]; k]),
        CovarianceType::Full => Covariances::Full(vec![vec![vec![0.0; q]; q]; k]),
    }
}

/// Fits one mixture by EM from the given initial means.
///
/// Initialization hard-assigns each point to its nearest initial mean and
/// runs one M-step. Afterwards E and M steps alternate until the relative
/// log-likelihood change drops below `opts.tol` or `opts.max_iter` is hit.
/// A component whose responsibility mass underflows is re-seeded on the
/// worst-fit point and fitting continues.
pub fn fit_gmm_em(
    data: &[Vec<f64>],
    cov_type: CovarianceType,
    init_means: &[Vec<f64>],
    opts: &EmOptions,
    seed: u64,
) -> Result<GmmModel> {
    let q = check_data(data)?;
    let n = data.len();
    let k = init_means.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no initial means".into()));
    }
    if n <= k {
        return Err(Error::InvalidArgument(format!(
            "need more points than components: n = {n}, k = {k}"
        )));
    }
    if init_means.iter().any(|m| m.len() != q) {
        return Err(Error::InvalidArgument("initial mean dimension mismatch".into()));
    }

    let mut state = FitState {
        n,
        q,
        k,
        weights: vec![0.0; k],
        means: init_means.to_vec(),
        covariances: empty_covariances(cov_type, k, q),
        reseeds: 0,
    };

    // Hard initial responsibilities: nearest initial mean, ties low.
    let mut resp = vec![0.0f64; n * k];
    for (i, x) in data.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (j, mu) in init_means.iter().enumerate() {
            let d = sq_euclid(x, mu);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        resp[i * k + best] = 1.0;
    }
    // An initial mean can capture zero points (duplicate inits); give it
    // back its own nearest point so the first M-step is well defined.
    reseed_empty(&mut resp, n, k, &|i| {
        let x = &data[i];
        init_means.iter().map(|mu| sq_euclid(x, mu)).fold(f64::INFINITY, f64::min)
    });
    state.m_step(data, &resp, opts.reg);

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut reseeded_last_iter = false;
    let mut n_iter = 0;
    while n_iter < opts.max_iter {
        n_iter += 1;
        // E-step.
        let scratch_model = state.as_model(cov_type, seed);
        let scorer = scratch_model.scorer()?;
        let weights_ln: Vec<f64> = state.weights.iter().map(|w| w.ln()).collect();
        let rows = exec::map_indices(n, |i| {
            let mut lp = vec![0.0f64; k];
            for j in 0..k {
                lp[j] = weights_ln[j] + scorer.log_component_density(j, &data[i]);
            }
            let mx = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + lp.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for v in &mut lp {
                *v = (*v - lse).exp();
            }
            (lp, lse)
        });
        let ll: f64 = rows.iter().map(|(_, lse)| *lse).sum();
        for (i, (row, _)) in rows.iter().enumerate() {
            resp[i * k..(i + 1) * k].copy_from_slice(row);
        }

        if let Some(prev) = trace.last() {
            if !reseeded_last_iter {
                debug_assert!(
                    ll >= prev - 1e-8 * prev.abs().max(1.0),
                    "log-likelihood decreased: {prev} -> {ll}"
                );
            }
            if (ll - prev).abs() < opts.tol * prev.abs().max(1.0) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);

        // Degenerate components: re-seed on the worst-fit points.
        reseeded_last_iter = false;
        let mut mass = vec![0.0f64; k];
        for i in 0..n {
            for j in 0..k {
                mass[j] += resp[i * k + j];
            }
        }
        let mut used: Vec<usize> = Vec::new();
        for j in 0..k {
            if mass[j] < 1e-10 {
                let worst = worst_fit_point(&rows, &used);
                log::warn!("component {j} underflowed; re-seeding at point {worst}");
                for jj in 0..k {
                    resp[worst * k + jj] = 0.0;
                }
                resp[worst * k + j] = 1.0;
                used.push(worst);
                state.reseeds += 1;
                reseeded_last_iter = true;
            }
        }

        state.m_step(data, &resp, opts.reg);
    }

    let mut model = state.as_model(cov_type, seed);
    model.log_likelihood = *trace.last().expect("at least one iteration");
    model.ll_trace = trace;
    model.n_iter = n_iter;
    model.converged = converged;
    Ok(model)
}

/// Lowest per-point mixture log density, skipping already-used points.
fn worst_fit_point(rows: &[(Vec<f64>, f64)], used: &[usize]) -> usize {
    let mut worst = usize::MAX;
    let mut worst_lse = f64::INFINITY;
    for (i, (_, lse)) in rows.iter().enumerate() {
        if !used.contains(&i) && *lse < worst_lse {
            worst_lse = *lse;
            worst = i;
        }
    }
    worst
}

/// Gives every empty column one point (its best-claiming point by `score`).
fn reseed_empty(resp: &mut [f64], n: usize, k: usize, score: &dyn Fn(usize) -> f64) {
    let mut mass = vec![0.0f64; k];
    for i in 0..n {
        for j in 0..k {
            mass[j] += resp[i * k + j];
        }
    }
    let mut used = Vec::new();
    for j in 0..k {
        if mass[j] < 0.5 {
            let mut worst = usize::MAX;
            let mut worst_s = f64::NEG_INFINITY;
            for i in 0..n {
                if !used.contains(&i) {
                    let s = score(i);
                    if s > worst_s {
                        worst_s = s;
                        worst = i;
                    }
                }
            }
            for jj in 0..k {
                resp[worst * k + jj] = 0.0;
            }
            resp[worst * k + j] = 1.0;
            used.push(worst);
        }
    }
}

/// Fits the full candidate grid and picks the winner.
///
/// Each (k, covariance type) candidate keeps the best of `restarts` fits by
/// final log-likelihood. Candidates within 2% of both the best BIC and the
/// best AIC are shortlisted; the shortlist member with the largest mean
/// pairwise Bhattacharyya distance is chosen, ties to smaller k, then to
/// the simpler covariance type.
pub fn select_gmm(
    data: &[Vec<f64>],
    ks: &[usize],
    cov_types: &[CovarianceType],
    restarts: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<(GmmModel, GmmSelectionReport)> {
    check_data(data)?;
    if ks.is_empty() || cov_types.is_empty() || restarts == 0 {
        return Err(Error::InvalidArgument("empty gmm selection grid".into()));
    }
    let n = data.len();
    if ks.iter().any(|&k| k >= n) {
        return Err(Error::InvalidArgument(format!(
            "largest k must stay below n = {n}"
        )));
    }

    struct Fitted {
        model: GmmModel,
        cand: GmmCandidate,
    }
    let mut fitted: Vec<Fitted> = Vec::new();
    for &k in ks {
        for (c_rank, &cov) in cov_types.iter().enumerate() {
            let mut best: Option<GmmModel> = None;
            let mut lls = Vec::with_capacity(restarts);
            for r in 0..restarts {
                let init_seed = exec::derive_seed(seed, &[k as u64, c_rank as u64, r as u64]);
                let init = init_centroids_farthest(data, k, init_seed)?;
                let model = fit_gmm_em(data, cov, &init, opts, init_seed)?;
                lls.push(model.log_likelihood);
                let better = match &best {
                    None => true,
                    Some(b) => model.log_likelihood > b.log_likelihood,
                };
                if better {
                    best = Some(model);
                }
            }
            let model = best.expect("restarts > 0");
            let (aic, bic) = information_criteria(&model, n as f64);
            let bhattacharyya = if k >= 2 { mean_pairwise_bhattacharyya(&model)? } else { 0.0 };
            fitted.push(Fitted {
                model,
                cand: GmmCandidate {
                    k,
                    cov_type: cov,
                    aic,
                    bic,
                    bhattacharyya,
                    restart_log_likelihoods: lls,
                    shortlisted: false,
                    chosen: false,
                },
            });
        }
    }

    let best_aic = fitted.iter().map(|f| f.cand.aic).fold(f64::INFINITY, f64::min);
    let best_bic = fitted.iter().map(|f| f.cand.bic).fold(f64::INFINITY, f64::min);
    let aic_cut = best_aic + 0.02 * best_aic.abs();
    let bic_cut = best_bic + 0.02 * best_bic.abs();
    for f in &mut fitted {
        f.cand.shortlisted = f.cand.aic <= aic_cut && f.cand.bic <= bic_cut;
    }

    let mut winner: Option<usize> = None;
    for (i, f) in fitted.iter().enumerate() {
        if !f.cand.shortlisted {
            continue;
        }
        let better = match winner {
            None => true,
            Some(w) => {
                let wc = &fitted[w].cand;
                let c = &f.cand;
                c.bhattacharyya > wc.bhattacharyya
                    || (c.bhattacharyya == wc.bhattacharyya
                        && (c.k, c.cov_type) < (wc.k, wc.cov_type))
            }
        };
        if better {
            winner = Some(i);
        }
    }
    let winner = winner.expect("best-BIC candidate always shortlisted");
    fitted[winner].cand.chosen = true;

    let report = GmmSelectionReport {
        chosen_k: fitted[winner].cand.k,
        chosen_cov: fitted[winner].cand.cov_type,
        candidates: fitted.iter().map(|f| f.cand.clone()).collect(),
    };
    let model = fitted.swap_remove(winner).model;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::{adjusted_rand_index, ks_distance_uniform};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn blob(
        rng: &mut rand_chacha::ChaCha8Rng,
        center: &[f64],
        std: f64,
        n: usize,
    ) -> Vec<Vec<f64>> {
        let normal = Normal::new(0.0, std).unwrap();
        (0..n)
            .map(|_| center.iter().map(|c| c + normal.sample(rng)).collect())
            .collect()
    }

    #[test]
    fn farthest_init_base_and_collinear_cases() {
        let data = vec![vec![0.0], vec![1.0], vec![10.0]];
        let mut firsts = [false; 3];
        for seed in 0..60 {
            let k1 = init_centroids_farthest(&data, 1, seed).unwrap();
            assert!(data.contains(&k1[0]));
            let k2 = init_centroids_farthest(&data, 2, seed).unwrap();
            // Whatever the random first pick, the farthest rule fixes the
            // second: from 0 or 1 it is 10; from 10 it is 0.
            let expected_second = if k2[0][0] == 10.0 { 0.0 } else { 10.0 };
            assert_eq!(k2[1][0], expected_second);
            firsts[data.iter().position(|p| p == &k2[0]).unwrap()] = true;
        }
        assert!(firsts.iter().all(|&seen| seen), "first pick not uniform-ish");
    }

    #[test]
    fn farthest_init_is_deterministic_and_checks_k() {
        let data = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]];
        let a = init_centroids_farthest(&data, 2, 9).unwrap();
        let b = init_centroids_farthest(&data, 2, 9).unwrap();
        assert_eq!(a, b);
        assert!(init_centroids_farthest(&data, 4, 9).is_err());
    }

    fn ml_covariance(data: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = data.len() as f64;
        let q = data[0].len();
        let mean: Vec<f64> = (0..q)
            .map(|d| data.iter().map(|x| x[d]).sum::<f64>() / n)
            .collect();
        let mut cov = vec![vec![0.0; q]; q];
        for x in data {
            for a in 0..q {
                for b in 0..q {
                    cov[a][b] += (x[a] - mean[a]) * (x[b] - mean[b]) / n;
                }
            }
        }
        cov
    }

    #[test]
    fn single_component_recovers_sample_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let data = blob(&mut rng, &[3.0, -1.0], 1.5, 400);
        let n = data.len() as f64;
        let mean: Vec<f64> = (0..2)
            .map(|d| data.iter().map(|x| x[d]).sum::<f64>() / n)
            .collect();
        let cov = ml_covariance(&data);
        let opts = EmOptions::default();
        for cov_type in CovarianceType::ALL {
            let model = fit_gmm_em(&data, cov_type, &[mean.clone()], &opts, 0).unwrap();
            assert_eq!(model.weights, vec![1.0]);
            for d in 0..2 {
                assert!((model.means[0][d] - mean[d]).abs() < 1e-9);
            }
            let check_matrix = |got: &Vec<Vec<f64>>| {
                for a in 0..2 {
                    for b in 0..2 {
                        let want = cov[a][b] + if a == b { opts.reg } else { 0.0 };
                        assert!((got[a][b] - want).abs() < 1e-9);
                    }
                }
            };
            match (&model.covariances, cov_type) {
                (Covariances::Full(c), CovarianceType::Full) => check_matrix(&c[0]),
                (Covariances::Tied(t), CovarianceType::Tied) => check_matrix(t),
                (Covariances::Diagonal(c), CovarianceType::Diagonal) => {
                    for d in 0..2 {
                        assert!((c[0][d] - cov[d][d] - opts.reg).abs() < 1e-9);
                    }
                }
                (Covariances::Spherical(c), CovarianceType::Spherical) => {
                    let want = (cov[0][0] + cov[1][1]) / 2.0 + opts.reg;
                    assert!((c[0] - want).abs() < 1e-9);
                }
                _ => panic!("covariance store does not match cov_type"),
            }
        }
    }

    #[test]
    fn two_blobs_recover_their_sample_means() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = blob(&mut rng, &[0.0, 0.0], 1.0, 200);
        let b = blob(&mut rng, &[10.0, 10.0], 1.0, 200);
        let sample_mean = |pts: &[Vec<f64>]| -> Vec<f64> {
            (0..2)
                .map(|d| pts.iter().map(|x| x[d]).sum::<f64>() / pts.len() as f64)
                .collect()
        };
        let (ma, mb) = (sample_mean(&a), sample_mean(&b));
        let mut data = a;
        data.extend(b);
        let init = init_centroids_farthest(&data, 2, 13).unwrap();
        let model =
            fit_gmm_em(&data, CovarianceType::Full, &init, &EmOptions::default(), 0).unwrap();
        for target in [&ma, &mb] {
            let closest = model
                .means
                .iter()
                .map(|m| sq_euclid(m, target))
                .fold(f64::INFINITY, f64::min);
            assert!(closest.sqrt() < 0.5, "fitted means missed a blob mean");
        }
        assert!(model.converged);
        let wsum: f64 = model.weights.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-9);
        assert!(model.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn log_likelihood_trace_is_monotone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(40);
        let mut data = blob(&mut rng, &[0.0, 0.0, 0.0], 1.0, 150);
        data.extend(blob(&mut rng, &[4.0, 1.0, -2.0], 2.0, 150));
        for cov_type in CovarianceType::ALL {
            let init = init_centroids_farthest(&data, 3, 5).unwrap();
            let model = fit_gmm_em(&data, cov_type, &init, &EmOptions::default(), 0).unwrap();
            assert_eq!(model.reseed_events, 0);
            for w in model.ll_trace.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0),
                    "trace decreased under {cov_type}: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn criteria_plug_in_values() {
        let (aic, _) = criteria_from_parts(1, 0.0, 50.0);
        assert_eq!(aic, 2.0);
        let e2 = std::f64::consts::E * std::f64::consts::E;
        let (_, bic) = criteria_from_parts(1, 0.0, e2);
        assert!((bic - 2.0).abs() < 1e-12);
        // k = 1, spherical, q = 1: one mean + one variance.
        assert_eq!(n_params(1, 1, CovarianceType::Spherical), 2);
        let (aic, _) = criteria_from_parts(n_params(1, 1, CovarianceType::Spherical), -3.0, 50.0);
        assert_eq!(aic, 4.0 + 6.0);
        assert_eq!(n_params(3, 2, CovarianceType::Full), 2 + 6 + 9);
        assert_eq!(n_params(3, 2, CovarianceType::Diagonal), 2 + 6 + 6);
        assert_eq!(n_params(3, 2, CovarianceType::Tied), 2 + 6 + 3);
    }

    fn manual_model(means: Vec<Vec<f64>>, weights: Vec<f64>, vars: Vec<f64>) -> GmmModel {
        let k = means.len();
        let q = means[0].len();
        GmmModel {
            k,
            q,
            cov_type: CovarianceType::Spherical,
            weights,
            means,
            covariances: Covariances::Spherical(vars),
            log_likelihood: 0.0,
            ll_trace: vec![],
            n_iter: 0,
            converged: true,
            reseed_events: 0,
            n_train: 0,
            seed: 0,
        }
    }

    #[test]
    fn bhattacharyya_known_values() {
        // Identical components: distance 0.
        let same = manual_model(
            vec![vec![1.0, 2.0], vec![1.0, 2.0]],
            vec![0.5, 0.5],
            vec![1.0, 1.0],
        );
        assert!(mean_pairwise_bhattacharyya(&same).unwrap().abs() < 1e-12);
        // 1-D, mean difference 2, unit variances: (1/8)·4 = 0.5.
        let apart = manual_model(vec![vec![0.0], vec![2.0]], vec![0.5, 0.5], vec![1.0, 1.0]);
        assert!((mean_pairwise_bhattacharyya(&apart).unwrap() - 0.5).abs() < 1e-12);
        // Relabeling leaves the mean untouched.
        let spread = manual_model(
            vec![vec![0.0], vec![2.0], vec![5.0]],
            vec![0.3, 0.3, 0.4],
            vec![1.0, 2.0, 0.5],
        );
        let relabeled = manual_model(
            vec![vec![5.0], vec![0.0], vec![2.0]],
            vec![0.4, 0.3, 0.3],
            vec![0.5, 1.0, 2.0],
        );
        let a = mean_pairwise_bhattacharyya(&spread).unwrap();
        let b = mean_pairwise_bhattacharyya(&relabeled).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn day_scores_match_analytic_survivals() {
        // Identity covariance in 2-D: survival = exp(−d²/2).
        let model = manual_model(vec![vec![0.0, 0.0]], vec![1.0], vec![1.0]);
        let at_mean = score_day_gmm(&model, &[0.0, 0.0]).unwrap();
        assert_eq!(at_mean.label, 1);
        assert_eq!(at_mean.assigned_likelihood, 1.0);
        assert_eq!(at_mean.weighted_likelihood, 1.0);

        let d2 = 2.0 * std::f64::consts::LN_2;
        let day = [d2.sqrt(), 0.0];
        let s = score_day_gmm(&model, &day).unwrap();
        assert!((s.assigned_likelihood - 0.5).abs() < 1e-12);

        // Two components, weights 1/2 each, survivals 0.8 and 0.2.
        let r1 = (-2.0 * 0.8f64.ln()).sqrt();
        let r2 = (-2.0 * 0.2f64.ln()).sqrt();
        let two = manual_model(
            vec![vec![r1, 0.0], vec![r2, 0.0]],
            vec![0.5, 0.5],
            vec![1.0, 1.0],
        );
        let s = two.scorer().unwrap().score_day(&[0.0, 0.0]);
        assert!((s.weighted_likelihood - 0.5).abs() < 1e-12);
        assert_eq!(s.label, 1);
        assert!((s.assigned_likelihood - 0.8).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_with_identity_covariance_is_squared_euclid() {
        let model = manual_model(vec![vec![1.0, -2.0, 0.5]], vec![1.0], vec![1.0]);
        let scorer = model.scorer().unwrap();
        let day = [4.0, 0.0, -1.0];
        let want = sq_euclid(&day, &model.means[0]);
        assert!((scorer.mahalanobis_sq(0, &day) - want).abs() < 1e-12);

        // Same check through the full-covariance path.
        let full = GmmModel {
            cov_type: CovarianceType::Full,
            covariances: Covariances::Full(vec![vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ]]),
            ..model
        };
        let scorer = full.scorer().unwrap();
        assert!((scorer.mahalanobis_sq(0, &day) - want).abs() < 1e-10);
    }

    #[test]
    fn scores_stay_in_unit_interval_and_weighted_is_convex() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let mut data = blob(&mut rng, &[0.0, 0.0], 1.0, 120);
        data.extend(blob(&mut rng, &[3.0, -1.0], 0.5, 80));
        let init = init_centroids_farthest(&data, 2, 3).unwrap();
        let model =
            fit_gmm_em(&data, CovarianceType::Diagonal, &init, &EmOptions::default(), 0).unwrap();
        let scorer = model.scorer().unwrap();
        for day in data.iter().take(50) {
            let s = scorer.score_day(day);
            assert!((0.0..=1.0).contains(&s.assigned_likelihood));
            assert!((0.0..=1.0).contains(&s.weighted_likelihood));
            let survivals: Vec<f64> = (0..model.k)
                .map(|j| chi_squared_survival(scorer.mahalanobis_sq(j, day), model.q))
                .collect();
            let max = survivals.iter().cloned().fold(0.0f64, f64::max);
            let min = survivals.iter().cloned().fold(1.0f64, f64::min);
            assert!(s.weighted_likelihood <= max + 1e-12);
            assert!(s.weighted_likelihood >= min - 1e-12);
        }
    }

    #[test]
    fn assigned_likelihood_is_uniform_for_model_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let data = blob(&mut rng, &[1.0, -2.0, 0.0], 1.3, 500);
        let mean: Vec<f64> = (0..3)
            .map(|d| data.iter().map(|x| x[d]).sum::<f64>() / 500.0)
            .collect();
        let model =
            fit_gmm_em(&data, CovarianceType::Full, &[mean], &EmOptions::default(), 0).unwrap();
        let samples = model.sample(5000, 123).unwrap();
        let scorer = model.scorer().unwrap();
        let scores: Vec<f64> = samples
            .iter()
            .map(|s| scorer.score_day(s).assigned_likelihood)
            .collect();
        assert!(ks_distance_uniform(&scores) < 0.05);
    }

    #[test]
    fn selection_recovers_three_blobs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut data = blob(&mut rng, &[0.0, 0.0], 0.7, 100);
        data.extend(blob(&mut rng, &[8.0, 8.0], 0.7, 100));
        data.extend(blob(&mut rng, &[-8.0, 8.0], 0.7, 100));
        let truth: Vec<usize> = (0..300).map(|i| i / 100).collect();
        let ks: Vec<usize> = (2..=6).collect();
        let (model, report) =
            select_gmm(&data, &ks, &CovarianceType::ALL, 3, 11, &EmOptions::default()).unwrap();
        assert_eq!(report.chosen_k, 3);
        assert_eq!(report.candidates.iter().filter(|c| c.chosen).count(), 1);
        assert!(report.candidates.iter().all(|c| c.restart_log_likelihoods.len() == 3));
        let scorer = model.scorer().unwrap();
        let labels: Vec<usize> = data.iter().map(|x| scorer.score_day(x).label - 1).collect();
        assert!(adjusted_rand_index(&truth, &labels) > 0.9);
    }

    #[test]
    fn single_candidate_grid_is_chosen() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        let data = blob(&mut rng, &[0.0, 1.0], 1.0, 60);
        let (model, report) = select_gmm(
            &data,
            &[2],
            &[CovarianceType::Spherical],
            2,
            0,
            &EmOptions::default(),
        )
        .unwrap();
        assert_eq!(report.chosen_k, 2);
        assert_eq!(model.k, 2);
        assert!(report.candidates[0].chosen);
    }

    #[test]
    fn model_json_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let data = blob(&mut rng, &[0.0, 0.0], 1.0, 50);
        let init = init_centroids_farthest(&data, 2, 1).unwrap();
        let model =
            fit_gmm_em(&data, CovarianceType::Tied, &init, &EmOptions::default(), 1).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: GmmModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
        let day = vec![0.3, -0.2];
        assert_eq!(
            score_day_gmm(&model, &day).unwrap(),
            score_day_gmm(&back, &day).unwrap()
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = vec![vec![0.0, f64::NAN]];
        assert!(matches!(
            init_centroids_farthest(&data, 1, 0),
            Err(Error::InvalidArgument(_))
        ));
        let tiny = vec![vec![0.0], vec![1.0]];
        let init = vec![vec![0.0], vec![1.0]];
        assert!(fit_gmm_em(&tiny, CovarianceType::Full, &init, &EmOptions::default(), 0).is_err());
    }

    #[test]
    fn chi_squared_survival_edges() {
        assert_eq!(chi_squared_survival(0.0, 5), 1.0);
        assert!((chi_squared_survival(2.0 * std::f64::consts::LN_2, 2) - 0.5).abs() < 1e-12);
        assert!(chi_squared_survival(1e9, 2) < 1e-12);
        // Survival decreases in x.
        let mut prev = 1.0;
        for i in 1..50 {
            let s = chi_squared_survival(i as f64 * 0.5, 7);
            assert!(s <= prev);
            prev = s;
        }
    }
}
