use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{check_input, kmeans_fit, Algorithm, CentroidSpace, ClusterModel, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::embedder::{dot, l2_norm, EmbeddingMatrix};
use crate::error::{Error, Result};

const SELF_LOOP: f64 = 1e-8;
/// Above this size the eigenvectors come from block subspace iteration on
/// the sparse graph instead of a dense decomposition.
const DENSE_LIMIT: usize = 1200;
const SUBSPACE_MAX_ITER: usize = 500;

/// Spectral clustering on a symmetrized kNN cosine-affinity graph.
///
/// Negative cosines get zero affinity. Every node carries a tiny self-loop
/// so isolated nodes keep a positive degree. Rows of the bottom-k
/// eigenvectors of the symmetric normalized Laplacian are unit-normalized
/// and clustered with k-means; centroids stay in those coordinates.
pub fn spectral_fit(x: &EmbeddingMatrix, k: usize, seed: u64, n_neighbors: usize) -> Result<ClusterModel> {
    check_input(x, k)?;
    let n = x.len();
    if n_neighbors == 0 {
        return Err(Error::InvalidClusterParam("n_neighbors must be at least 1".into()));
    }
    let n_neighbors = n_neighbors.min(n.saturating_sub(1));

    let unit = unit_rows(x)?;
    let graph = knn_graph(&unit, x.dim(), n, n_neighbors);
    let inv_sqrt_deg: Vec<f64> = graph
        .iter()
        .map(|row| 1.0 / row.values().sum::<f64>().sqrt())
        .collect();

    let vectors = if n <= DENSE_LIMIT {
        dense_bottom_eigenvectors(&graph, &inv_sqrt_deg, k)
    } else {
        subspace_bottom_eigenvectors(&graph, &inv_sqrt_deg, k, seed)
    };

    let mut data = Vec::with_capacity(n * k);
    for i in 0..n {
        let row: Vec<f64> = (0..k).map(|c| vectors[(i, c)]).collect();
        let norm = l2_norm(&row);
        if norm > 0.0 {
            data.extend(row.iter().map(|v| v / norm));
        } else {
            data.extend(row);
        }
    }
    let spectral = EmbeddingMatrix::from_flat(x.ids().to_vec(), data, k)?;
    let inner = kmeans_fit(&spectral, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    Ok(ClusterModel {
        algorithm: Algorithm::Spectral,
        centroid_space: CentroidSpace::Spectral,
        inertia_trace: Vec::new(),
        ..inner
    })
}

fn unit_rows(x: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.as_flat().len());
    for row in x.rows() {
        let n = l2_norm(row);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        out.extend(row.iter().map(|v| v / n));
    }
    Ok(out)
}

/// Symmetric adjacency lists: w_ij = max over the two kNN directions.
fn knn_graph(unit: &[f64], dim: usize, n: usize, n_neighbors: usize) -> Vec<BTreeMap<usize, f64>> {
    let row = |i: usize| &unit[i * dim..(i + 1) * dim];
    let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sims: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, dot(row(i), row(j)))).collect();
            sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            sims.truncate(n_neighbors);
            sims
        })
        .collect();

    let mut graph = vec![BTreeMap::new(); n];
    for (i, list) in neighbors.iter().enumerate() {
        for &(j, s) in list {
            let w = s.max(0.0);
            for (a, b) in [(i, j), (j, i)] {
                let e = graph[a].entry(b).or_insert(0.0f64);
                *e = e.max(w);
            }
        }
    }
    for (i, row) in graph.iter_mut().enumerate() {
        *row.entry(i).or_insert(0.0) += SELF_LOOP;
    }
    graph
}

fn dense_bottom_eigenvectors(graph: &[BTreeMap<usize, f64>], inv_sqrt_deg: &[f64], k: usize) -> DMatrix<f64> {
    let n = graph.len();
    let mut lap = DMatrix::<f64>::identity(n, n);
    for (i, row) in graph.iter().enumerate() {
        for (&j, &w) in row {
            lap[(i, j)] -= inv_sqrt_deg[i] * w * inv_sqrt_deg[j];
        }
    }
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    DMatrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, order[c])])
}

/// Top-k eigenvectors of (I + D^-1/2 W D^-1/2) / 2, which are the bottom-k
/// of the normalized Laplacian, by orthogonal iteration with a final
/// Rayleigh-Ritz rotation.
fn subspace_bottom_eigenvectors(
    graph: &[BTreeMap<usize, f64>],
    inv_sqrt_deg: &[f64],
    k: usize,
    seed: u64,
) -> DMatrix<f64> {
    let n = graph.len();
    let block = (2 * k + 8).min(n);
    let apply = |q: &DMatrix<f64>| -> DMatrix<f64> {
        let cols: Vec<Vec<f64>> = (0..q.ncols())
            .into_par_iter()
            .map(|c| {
                (0..n)
                    .map(|i| {
                        let mut acc = 0.0;
                        for (&j, &w) in &graph[i] {
                            acc += inv_sqrt_deg[i] * w * inv_sqrt_deg[j] * q[(j, c)];
                        }
                        0.5 * (q[(i, c)] + acc)
                    })
                    .collect()
            })
            .collect();
        DMatrix::from_fn(n, q.ncols(), |r, c| cols[c][r])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5bec);
    let init = DMatrix::from_fn(n, block, |_, _| StandardNormal.sample(&mut rng));
    let mut q = init.qr().q();
    let mut previous: Option<Vec<f64>> = None;
    for it in 0..SUBSPACE_MAX_ITER {
        q = apply(&q).qr().q();
        if it % 10 == 9 {
            let ritz = ritz_values(&q, &apply(&q), k);
            let done = previous
                .as_ref()
                .is_some_and(|p| p.iter().zip(&ritz).all(|(a, b)| (a - b).abs() < 1e-10));
            previous = Some(ritz);
            if done {
                break;
            }
        }
    }
    let aq = apply(&q);
    let h = q.transpose() * &aq;
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..block).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let rot = DMatrix::from_fn(block, k, |r, c| eig.eigenvectors[(r, order[c])]);
    q * rot
}

fn ritz_values(q: &DMatrix<f64>, aq: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let h = q.transpose() * aq;
    let h = (&h + h.transpose()) * 0.5;
    let mut vals: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals.truncate(k);
    vals
}
