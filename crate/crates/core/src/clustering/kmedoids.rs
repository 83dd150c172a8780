use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_input, inertia_of, kmeanspp_indices, nearest, Algorithm, CentroidSpace, ClusterModel};
use crate::embedder::{squared_distance, EmbeddingMatrix};
use crate::error::Result;

/// Alternating k-medoids: assign every row to its nearest medoid, then move
/// each medoid to the member with the smallest summed Euclidean distance to
/// the rest of its cluster. Repeats until the medoid set is stable.
pub fn kmedoids_fit(x: &EmbeddingMatrix, k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    check_input(x, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medoids = kmeanspp_indices(x, k, &mut rng);
    let mut assignments = assign(x, &medoids);
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let mut members = vec![Vec::new(); k];
        for (i, &a) in assignments.iter().enumerate() {
            members[a].push(i);
        }
        let updated: Vec<usize> = members
            .par_iter()
            .zip(&medoids)
            .map(|(m, &current)| best_medoid(x, m).unwrap_or(current))
            .collect();
        if updated == medoids {
            break;
        }
        medoids = updated;
        assignments = assign(x, &medoids);
    }

    let centroids: Vec<Vec<f64>> = medoids.iter().map(|&m| x.row(m).to_vec()).collect();
    let inertia = inertia_of(x, &centroids, &assignments);
    Ok(ClusterModel {
        algorithm: Algorithm::KMedoids,
        k,
        centroids,
        assignments,
        inertia,
        seed,
        iterations_run: iterations,
        centroid_space: CentroidSpace::Input,
        inertia_trace: Vec::new(),
        medoids: Some(medoids),
    })
}

fn assign(x: &EmbeddingMatrix, medoids: &[usize]) -> Vec<usize> {
    let centers: Vec<Vec<f64>> = medoids.iter().map(|&m| x.row(m).to_vec()).collect();
    let mut a: Vec<usize> = (0..x.len()).into_par_iter().map(|i| nearest(x.row(i), &centers).0).collect();
    // A medoid always belongs to its own cluster, even when duplicated rows
    // tie it with a lower-numbered medoid.
    for (c, &m) in medoids.iter().enumerate() {
        a[m] = c;
    }
    a
}

/// Member minimizing the summed distance to the others; ties to the
/// lowest row index.
fn best_medoid(x: &EmbeddingMatrix, members: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &cand in members {
        let cost: f64 = members
            .iter()
            .map(|&j| squared_distance(x.row(cand), x.row(j)).sqrt())
            .sum();
        if best.is_none_or(|(_, b)| cost < b) {
            best = Some((cand, cost));
        }
    }
    best.map(|(i, _)| i)
}
