use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_input, inertia_of, kmeanspp_indices, member_means, nearest, Algorithm, CentroidSpace, ClusterModel};
use crate::embedder::{squared_distance, EmbeddingMatrix};
use crate::error::Result;

/// Lloyd's algorithm from k-means++ seeding.
///
/// Stops once no centroid moves more than `tol` (Euclidean) or after
/// `max_iter` updates. A final assignment pass against the returned
/// centroids makes `inertia` consistent with them.
pub fn kmeans_fit(x: &EmbeddingMatrix, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<ClusterModel> {
    check_input(x, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = kmeanspp_indices(x, k, &mut rng)
        .into_iter()
        .map(|i| x.row(i).to_vec())
        .collect();

    let mut trace = Vec::new();
    let mut iterations = 0;
    let (mut assignments, mut dists) = assign(x, &centroids);
    repair_empty(x, &mut assignments, &mut dists, &mut centroids);
    trace.push(dists.iter().sum());

    while iterations < max_iter {
        let updated = member_means(x, &assignments, k);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b))
            .fold(0.0f64, f64::max)
            .sqrt();
        centroids = updated;
        iterations += 1;

        let (a, d) = assign(x, &centroids);
        assignments = a;
        dists = d;
        repair_empty(x, &mut assignments, &mut dists, &mut centroids);
        trace.push(dists.iter().sum());
        if shift < tol {
            break;
        }
    }

    let inertia = inertia_of(x, &centroids, &assignments);
    Ok(ClusterModel {
        algorithm: Algorithm::KMeans,
        k,
        centroids,
        assignments,
        inertia,
        seed,
        iterations_run: iterations,
        centroid_space: CentroidSpace::Input,
        inertia_trace: trace,
        medoids: None,
    })
}

/// Best-inertia model over `restarts` seeds `seed, seed + 1, ...`.
pub fn kmeans_best_of(
    x: &EmbeddingMatrix,
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    let mut best: Option<ClusterModel> = None;
    for r in 0..restarts.max(1) as u64 {
        let m = kmeans_fit(x, k, seed.wrapping_add(r), max_iter, tol)?;
        if best.as_ref().is_none_or(|b| m.inertia < b.inertia) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn assign(x: &EmbeddingMatrix, centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    (0..x.len()).into_par_iter().map(|i| nearest(x.row(i), centroids)).unzip()
}

/// Gives each empty cluster the point farthest from its current centroid,
/// drawn only from clusters that can spare a member.
pub(super) fn repair_empty(
    x: &EmbeddingMatrix,
    assignments: &mut [usize],
    dists: &mut [f64],
    centroids: &mut [Vec<f64>],
) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for i in 0..assignments.len() {
            if sizes[assignments[i]] < 2 {
                continue;
            }
            if pick.is_none_or(|p| dists[i] > dists[p]) {
                pick = Some(i);
            }
        }
        let Some(i) = pick else { break };
        sizes[assignments[i]] -= 1;
        sizes[c] = 1;
        assignments[i] = c;
        dists[i] = 0.0;
        centroids[c] = x.row(i).to_vec();
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn matrix(points: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(
            (0..points.len()).map(|i| format!("{i:03}")).collect(),
            points.iter().map(|p| p.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_points_single_cluster() {
        let p: &[f64] = &[2.0, 3.0];
        let x = matrix(&[p; 5]);
        let m = kmeans_fit(&x, 1, 0, 300, 1e-6).unwrap();
        assert_eq!(m.centroids[0], vec![2.0, 3.0]);
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn square_corners_each_alone() {
        let x = matrix(&[&[1.0, 1.0], &[1.0, -1.0], &[-1.0, 1.0], &[-1.0, -1.0]]);
        let m = kmeans_fit(&x, 4, 3, 300, 1e-6).unwrap();
        assert_eq!(m.inertia, 0.0);
        assert_eq!(m.sizes(), vec![1; 4]);
    }

    /// Exhaustive 2-partition enumeration as the oracle for the two-triad
    /// fixture.
    #[test]
    fn two_triads_match_brute_force() {
        let pts: [[f64; 2]; 6] = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [10.0, 10.0], [10.0, 11.0], [11.0, 10.0]];
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 6) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let members: Vec<&[f64; 2]> = (0..6).filter(|i| ((mask >> i) & 1 == 1) == side).map(|i| &pts[i]).collect();
                let cx = members.iter().map(|p| p[0]).sum::<f64>() / members.len() as f64;
                let cy = members.iter().map(|p| p[1]).sum::<f64>() / members.len() as f64;
                cost += members.iter().map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sum::<f64>();
            }
            if cost < best.0 {
                best = (cost, mask);
            }
        }
        assert_abs_diff_eq!(best.0, 8.0 / 3.0, epsilon = 1e-12);

        let x = matrix(&pts.iter().map(|p| &p[..]).collect::<Vec<_>>());
        let m = kmeans_fit(&x, 2, 1, 300, 1e-6).unwrap();
        assert_abs_diff_eq!(m.inertia, best.0, epsilon = 1e-12);
        assert_eq!(m.assignments[0], m.assignments[1]);
        assert_eq!(m.assignments[1], m.assignments[2]);
        assert_eq!(m.assignments[3], m.assignments[4]);
        assert_ne!(m.assignments[0], m.assignments[3]);
        let low = &m.centroids[m.assignments[0]];
        let high = &m.centroids[m.assignments[3]];
        assert_abs_diff_eq!(low[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(high[1], 31.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_k() {
        let x = matrix(&[&[0.0], &[1.0]]);
        assert!(kmeans_fit(&x, 3, 0, 10, 1e-6).is_err());
        assert!(kmeans_fit(&x, 0, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn duplicates_with_k_equal_n_leave_no_empty_cluster() {
        let x = matrix(&[&[1.0], &[1.0], &[1.0], &[5.0]]);
        let m = kmeans_fit(&x, 4, 0, 50, 1e-6).unwrap();
        assert!(m.sizes().iter().all(|&s| s == 1));
        assert_eq!(m.inertia, 0.0);
    }

    proptest! {
        #[test]
        fn inertia_never_increases(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 8..40),
            k in 1usize..6,
            seed in 0u64..1000,
        ) {
            let x = EmbeddingMatrix::from_rows((0..pts.len()).map(|i| i.to_string()).collect(), pts).unwrap();
            let m = kmeans_fit(&x, k, seed, 100, 1e-9).unwrap();
            for w in m.inertia_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            let sizes = m.sizes();
            prop_assert!(sizes.iter().all(|&s| s > 0));
            let again = kmeans_fit(&x, k, seed, 100, 1e-9).unwrap();
            prop_assert_eq!(m, again);
        }
    }
}
