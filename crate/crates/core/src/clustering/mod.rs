//! K-means, K-medoids and spectral clustering, plus nearest-to-centroid
//! rank selection.

mod kmeans;
mod kmedoids;
mod select;
mod spectral;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedder::{squared_distance, EmbeddingMatrix};
use crate::error::{Error, Result};

pub use kmeans::{kmeans_best_of, kmeans_fit};
pub use kmedoids::kmedoids_fit;
pub use select::{quota, rank_select, QuotaRule, SelectionSet};
pub use spectral::spectral_fit;

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    KMeans,
    KMedoids,
    Spectral,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::KMeans => "kmeans",
            Algorithm::KMedoids => "kmedoids",
            Algorithm::Spectral => "spectral",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Algorithm::KMeans),
            "kmedoids" => Ok(Algorithm::KMedoids),
            "spectral" => Ok(Algorithm::Spectral),
            other => Err(Error::InvalidClusterParam(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Which coordinates `ClusterModel::centroids` live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CentroidSpace {
    #[default]
    Input,
    /// Row-normalized Laplacian eigenvector coordinates.
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub algorithm: Algorithm,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    pub iterations_run: usize,
    #[serde(default)]
    pub centroid_space: CentroidSpace,
    /// Inertia after each assignment step (k-means only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inertia_trace: Vec<f64>,
    /// Row indices of the medoids (k-medoids only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub medoids: Option<Vec<usize>>,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    /// Centroids expressed in the coordinates of `x`. Spectral models report
    /// the mean of each cluster's input rows.
    pub fn centroids_in(&self, x: &EmbeddingMatrix) -> Vec<Vec<f64>> {
        match self.centroid_space {
            CentroidSpace::Input => self.centroids.clone(),
            CentroidSpace::Spectral => member_means(x, &self.assignments, self.k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub algorithm: Algorithm,
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub n_neighbors: usize,
}

impl ClusterConfig {
    pub fn new(algorithm: Algorithm, k: usize, seed: u64) -> Self {
        ClusterConfig {
            algorithm,
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            n_neighbors: DEFAULT_NEIGHBORS,
        }
    }
}

pub fn fit(x: &EmbeddingMatrix, cfg: &ClusterConfig) -> Result<ClusterModel> {
    match cfg.algorithm {
        Algorithm::KMeans => kmeans_fit(x, cfg.k, cfg.seed, cfg.max_iter, cfg.tol),
        Algorithm::KMedoids => kmedoids_fit(x, cfg.k, cfg.seed, cfg.max_iter),
        Algorithm::Spectral => spectral_fit(x, cfg.k, cfg.seed, cfg.n_neighbors),
    }
}

fn check_input(x: &EmbeddingMatrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidClusterParam("k must be at least 1".into()));
    }
    if k > x.len() {
        return Err(Error::TooManyClusters { k, n: x.len() });
    }
    if x.as_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// k-means++ seeding; returns row indices of the initial centers.
///
/// When every remaining point coincides with a chosen center the lowest
/// unchosen index is taken, so duplicate-heavy inputs still yield k
/// distinct rows.
fn kmeanspp_indices<R: Rng>(x: &EmbeddingMatrix, k: usize, rng: &mut R) -> Vec<usize> {
    let n = x.len();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = (0..n).map(|i| squared_distance(x.row(i), x.row(first))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().enumerate().filter(|(i, _)| !taken[*i]).map(|(_, d)| d).sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if taken[i] || d == 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a candidate")
        } else {
            (0..n).find(|&i| !taken[i]).expect("k <= n")
        };
        chosen.push(next);
        taken[next] = true;
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = squared_distance(x.row(i), x.row(next));
            if nd < *d {
                *d = nd;
            }
        }
    }
    chosen
}

fn member_means(x: &EmbeddingMatrix, assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = x.dim();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

/// Nearest centroid by squared distance, ties to the lower cluster id.
fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(row, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn inertia_of(x: &EmbeddingMatrix, centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| squared_distance(x.row(i), &centroids[a]))
        .sum()
}
