//! k-means over standardized session vectors.
//!
//! Lloyd iterations from k-means++ seeds, a best-of-restarts elbow report for
//! choosing `k`, and nearest-centroid assignment with a distance-derived
//! confidence score.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{scale_row, StandardizedMatrix};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    DegenerateK,
    #[error("{rows} rows cannot form {k} clusters")]
    TooFewRows { rows: usize, k: usize },
    #[error("vector has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k range is empty or outside [1, {rows}]")]
    EmptyRange { rows: usize },
    #[error("cluster {cluster} does not exist (k = {k})")]
    UnknownCluster { cluster: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, seed, max_iter: 100, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Column means used to z-score raw vectors (empty when fit on raw rows).
    #[serde(default)]
    pub means: Vec<f64>,
    #[serde(default)]
    pub stds: Vec<f64>,
    pub seed: u64,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after each Lloyd iteration.
    #[serde(default)]
    pub inertia_history: Vec<f64>,
    /// Training-row labels.
    #[serde(default)]
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub cluster_id: usize,
    pub distance: f64,
    pub confidence: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid, lowest index on ties.
fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_pp_init(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(rows[rng.random_range(0..rows.len())].clone());
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = rows.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..rows.len())
        };
        let c = rows[pick].clone();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm on raw rows. Deterministic in `(rows, params)`.
///
/// Empty clusters keep their previous centroid, so inertia is
/// non-increasing across iterations.
pub fn fit_rows(rows: &[Vec<f64>], params: &KMeansParams) -> Result<ClusterModel, ClusterError> {
    let k = params.k;
    if k == 0 {
        return Err(ClusterError::DegenerateK);
    }
    if rows.len() < k {
        return Err(ClusterError::TooFewRows { rows: rows.len(), k });
    }
    let dim = rows[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = kmeans_pp_init(rows, k, &mut rng);
    let mut labels = vec![0usize; rows.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..params.max_iter {
        iterations += 1;
        for (label, row) in labels.iter_mut().zip(rows) {
            *label = nearest(&centroids, row).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (label, row) in labels.iter().zip(rows) {
            counts[*label] += 1;
            for (s, x) in sums[*label].iter_mut().zip(row) {
                *s += x;
            }
        }
        let mut max_shift: f64 = 0.0;
        for ((c, sum), &count) in centroids.iter_mut().zip(sums).zip(&counts) {
            if count == 0 {
                continue;
            }
            let updated: Vec<f64> = sum.into_iter().map(|s| s / count as f64).collect();
            max_shift = max_shift.max(sq_dist(c, &updated).sqrt());
            *c = updated;
        }
        let inertia: f64 = rows.iter().map(|r| nearest(&centroids, r).1).sum();
        history.push(inertia);
        if max_shift < params.tol {
            break;
        }
    }
    for (label, row) in labels.iter_mut().zip(rows) {
        *label = nearest(&centroids, row).0;
    }
    let inertia = rows.iter().map(|r| nearest(&centroids, r).1).sum();
    Ok(ClusterModel {
        k,
        centroids,
        means: Vec::new(),
        stds: Vec::new(),
        seed: params.seed,
        inertia,
        iterations_run: iterations,
        inertia_history: history,
        labels,
    })
}

/// Fits on a standardized matrix and keeps its moments for later
/// assignment of raw vectors.
pub fn kmeans_fit(x: &StandardizedMatrix, params: &KMeansParams) -> Result<ClusterModel, ClusterError> {
    let mut model = fit_rows(&x.rows, params)?;
    model.means = x.means.clone();
    model.stds = x.stds.clone();
    Ok(model)
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Assigns a vector already in z-scored space.
    pub fn assign(&self, x: &[f64]) -> Result<Assignment, ClusterError> {
        if x.len() != self.dim() {
            return Err(ClusterError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let (cluster_id, d2) = nearest(&self.centroids, x);
        let distance = d2.sqrt();
        Ok(Assignment { cluster_id, distance, confidence: 1.0 / (1.0 + distance) })
    }

    /// Z-scores a raw feature vector with the stored moments, then assigns it.
    pub fn assign_raw(&self, raw: &[f64]) -> Result<Assignment, ClusterError> {
        if self.means.is_empty() {
            return self.assign(raw);
        }
        if raw.len() != self.means.len() {
            return Err(ClusterError::DimensionMismatch { expected: self.means.len(), got: raw.len() });
        }
        self.assign(&scale_row(raw, &self.means, &self.stds))
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

pub fn assign(model: &ClusterModel, x: &[f64]) -> Result<Assignment, ClusterError> {
    model.assign(x)
}

/// Elbow thresholds for [`select_k`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElbowCriteria {
    pub max_relative_drop: f64,
    pub min_cluster_share: f64,
    pub default_k: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ElbowCriteria {
    fn default() -> Self {
        Self { max_relative_drop: 0.10, min_cluster_share: 0.05, default_k: 5, max_iter: 100, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionRow {
    pub k: usize,
    pub inertia: f64,
    /// Fractional inertia reduction from `k` to `k + 1` clusters.
    pub relative_inertia_drop: f64,
    pub min_cluster_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionReport {
    pub rows: Vec<KSelectionRow>,
    pub chosen_k: usize,
}

/// Best of `restarts` fits; restarts run in parallel and ties keep the
/// lowest restart index.
pub fn best_of_restarts(
    rows: &[Vec<f64>],
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel, ClusterError> {
    let fits: Vec<ClusterModel> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let params = KMeansParams { k, seed: derive_seed(seed, &[k as u64, r]), max_iter, tol };
            fit_rows(rows, &params)
        })
        .collect::<Result<_, _>>()?;
    let mut best = 0;
    for (i, m) in fits.iter().enumerate() {
        if m.inertia < fits[best].inertia {
            best = i;
        }
    }
    Ok(fits.into_iter().nth(best).expect("at least one restart"))
}

/// Elbow diagnostics over `k_range`; picks the smallest `k` whose step to
/// `k + 1` gains less than `max_relative_drop` while no cluster falls below
/// `min_cluster_share`. Falls back to `default_k` clamped into the range.
pub fn select_k(
    x: &StandardizedMatrix,
    k_range: RangeInclusive<usize>,
    seed: u64,
    restarts: usize,
    criteria: &ElbowCriteria,
) -> Result<KSelectionReport, ClusterError> {
    let n = x.rows.len();
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo == 0 || lo > hi || hi > n {
        return Err(ClusterError::EmptyRange { rows: n });
    }
    let probe_hi = if hi < n { hi + 1 } else { hi };
    let fits: Vec<ClusterModel> = (lo..=probe_hi)
        .map(|k| best_of_restarts(&x.rows, k, seed, restarts, criteria.max_iter, criteria.tol))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for (i, k) in (lo..=hi).enumerate() {
        let inertia = fits[i].inertia;
        let drop = match fits.get(i + 1) {
            Some(next) if inertia > 0.0 => ((inertia - next.inertia) / inertia).max(0.0),
            _ => 0.0,
        };
        let min_share =
            fits[i].cluster_sizes().into_iter().min().unwrap_or(0) as f64 / n as f64;
        rows.push(KSelectionRow { k, inertia, relative_inertia_drop: drop, min_cluster_share: min_share });
    }
    let chosen_k = rows
        .iter()
        .find(|r| r.relative_inertia_drop < criteria.max_relative_drop && r.min_cluster_share >= criteria.min_cluster_share)
        .map(|r| r.k)
        .unwrap_or_else(|| criteria.default_k.clamp(lo, hi.min(n)));
    Ok(KSelectionReport { rows, chosen_k })
}

/// Ids of the `n` sessions of `cluster_id` closest to its centroid,
/// ties broken by id.
pub fn nearest_sessions(
    model: &ClusterModel,
    assignments: &[(String, Assignment)],
    cluster_id: usize,
    n: usize,
) -> Result<Vec<String>, ClusterError> {
    if cluster_id >= model.k {
        return Err(ClusterError::UnknownCluster { cluster: cluster_id, k: model.k });
    }
    let mut members: Vec<(&str, f64)> = assignments
        .iter()
        .filter(|(_, a)| a.cluster_id == cluster_id)
        .map(|(id, a)| (id.as_str(), a.distance))
        .collect();
    members.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(members.into_iter().take(n).map(|(id, _)| id.to_string()).collect())
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let sum_rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}
