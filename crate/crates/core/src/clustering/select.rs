use serde::{Deserialize, Serialize};

use super::ClusterModel;
use crate::embedder::{squared_distance, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Per-cluster quota rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuotaRule {
    /// `ceil(eta * size)`: every nonempty cluster keeps at least one member.
    #[default]
    Ceil,
    /// `floor(eta * size)`: rank <= eta * size taken literally; small
    /// clusters may contribute nothing.
    Floor,
}

/// Quota for a cluster of `size` members at fraction `eta`.
pub fn quota(size: usize, eta: f64, rule: QuotaRule) -> usize {
    let raw = eta * size as f64;
    // 1e-9 absorbs products such as 0.1 * 30 = 3.0000000000000004.
    let q = match rule {
        QuotaRule::Ceil => (raw - 1e-9).ceil().max(if size > 0 { 1.0 } else { 0.0 }),
        QuotaRule::Floor => (raw + 1e-9).floor(),
    };
    (q.max(0.0) as usize).min(size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSet {
    /// Cluster order, then ascending distance to the centroid.
    pub selected_ids: Vec<String>,
    pub per_cluster_counts: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub eta: f64,
}

impl SelectionSet {
    pub fn len(&self) -> usize {
        self.selected_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected_ids.is_empty()
    }
}

/// Within each cluster, keeps the members nearest to the centroid.
///
/// Members are ordered by Euclidean distance to the centroid, ties broken
/// by ascending item id.
pub fn rank_select(x: &EmbeddingMatrix, model: &ClusterModel, eta: f64, rule: QuotaRule) -> Result<SelectionSet> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::EtaOutOfRange(eta));
    }
    if model.assignments.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: model.assignments.len(),
        });
    }
    let centroids = model.centroids_in(x);
    let mut buckets: Vec<Vec<(f64, usize)>> = vec![Vec::new(); model.k];
    for (i, &c) in model.assignments.iter().enumerate() {
        buckets[c].push((squared_distance(x.row(i), &centroids[c]), i));
    }

    let ids = x.ids();
    let mut selected_ids = Vec::new();
    let mut per_cluster_counts = Vec::with_capacity(model.k);
    let mut cluster_sizes = Vec::with_capacity(model.k);
    for mut bucket in buckets {
        bucket.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| ids[a.1].cmp(&ids[b.1])));
        let take = quota(bucket.len(), eta, rule);
        cluster_sizes.push(bucket.len());
        per_cluster_counts.push(take);
        selected_ids.extend(bucket[..take].iter().map(|&(_, i)| ids[i].clone()));
    }
    Ok(SelectionSet {
        selected_ids,
        per_cluster_counts,
        cluster_sizes,
        eta,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::clustering::kmeans_fit;

    #[test]
    fn quota_arithmetic() {
        assert_eq!(quota(25, 0.1, QuotaRule::Ceil), 3);
        assert_eq!(quota(30, 0.1, QuotaRule::Ceil), 3);
        assert_eq!(quota(1, 0.1, QuotaRule::Ceil), 1);
        assert_eq!(quota(0, 0.1, QuotaRule::Ceil), 0);
        assert_eq!(quota(5, 0.1, QuotaRule::Floor), 0);
        assert_eq!(quota(30, 0.1, QuotaRule::Floor), 3);
        assert_eq!(quota(7, 1.0, QuotaRule::Ceil), 7);
    }

    #[test]
    fn eta_range() {
        let x = EmbeddingMatrix::from_rows(vec!["a".into()], vec![vec![0.0]]).unwrap();
        let m = kmeans_fit(&x, 1, 0, 10, 1e-6).unwrap();
        for eta in [0.0, -1.0, 1.01] {
            assert!(matches!(rank_select(&x, &m, eta, QuotaRule::Ceil), Err(Error::EtaOutOfRange(_))));
        }
    }

    #[test]
    fn ties_break_by_id() {
        // Four points equidistant from the centroid at the origin.
        let x = EmbeddingMatrix::from_rows(
            vec!["d".into(), "b".into(), "c".into(), "a".into()],
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
        )
        .unwrap();
        let m = kmeans_fit(&x, 1, 0, 10, 1e-6).unwrap();
        let s = rank_select(&x, &m, 0.5, QuotaRule::Ceil).unwrap();
        assert_eq!(s.selected_ids, vec!["a".to_string(), "b".to_string()]);
    }

    /// Brute-force selector: sort every (cluster, distance, id) triple
    /// globally and walk it once.
    fn brute_force(x: &EmbeddingMatrix, m: &ClusterModel, eta: f64) -> Vec<String> {
        let mut all: Vec<(usize, f64, String)> = (0..x.len())
            .map(|i| {
                let c = m.assignments[i];
                let d: f64 = x.row(i).iter().zip(&m.centroids[c]).map(|(a, b)| (a - b).powi(2)).sum();
                (c, d, x.ids()[i].clone())
            })
            .collect();
        all.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        let sizes = m.sizes();
        let mut seen = vec![0usize; m.k];
        let mut out = Vec::new();
        for (c, _, id) in all {
            let limit = ((eta * sizes[c] as f64) - 1e-9).ceil().max(1.0) as usize;
            if seen[c] < limit {
                out.push(id);
            }
            seen[c] += 1;
        }
        out
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_size_bound(
            pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 5..60),
            k in 1usize..6,
            eta in 0.01f64..=1.0,
            seed in 0u64..100,
        ) {
            prop_assume!(k <= pts.len());
            let n = pts.len();
            let x = EmbeddingMatrix::from_rows((0..n).map(|i| format!("{i:03}")).collect(), pts).unwrap();
            let m = kmeans_fit(&x, k, seed, 50, 1e-9).unwrap();
            let s = rank_select(&x, &m, eta, QuotaRule::Ceil).unwrap();
            prop_assert_eq!(&s.selected_ids, &brute_force(&x, &m, eta));
            let lower = ((eta * n as f64) - 1e-9).ceil() as usize;
            prop_assert!(s.len() >= lower && s.len() <= lower + k);
            let full = rank_select(&x, &m, 1.0, QuotaRule::Ceil).unwrap();
            prop_assert_eq!(full.len(), n);
        }
    }
}
