//! Breadth compression: keep the prompts nearest their embedding-cluster
//! centroids.

use serde::{Deserialize, Serialize};

use crate::clustering::{self, Algorithm, ClusterConfig, ClusterModel, QuotaRule};
use crate::corpus::Corpus;
use crate::embedder::EmbeddingMatrix;
use crate::error::Result;

/// Cluster count used at full scale.
pub const FULL_CLUSTERS: usize = 100;
pub const DEFAULT_ETA: f64 = 0.1;

/// Cluster count when none is configured: one cluster per ~500 prompts,
/// at least two, never more than the prompt count.
pub fn desk_default_clusters(n: usize) -> usize {
    ((n as f64 / 500.0).round() as usize).max(2).min(n.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreadthConfig {
    pub k: Option<usize>,
    pub eta: f64,
    pub algorithm: Algorithm,
    pub seed: u64,
    #[serde(default)]
    pub quota: QuotaRule,
}

impl Default for BreadthConfig {
    fn default() -> Self {
        BreadthConfig {
            k: None,
            eta: DEFAULT_ETA,
            algorithm: Algorithm::KMeans,
            seed: 0,
            quota: QuotaRule::Ceil,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterCount {
    pub cluster: usize,
    pub size: usize,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreadthReport {
    pub original_breadth: usize,
    pub compressed_breadth: usize,
    pub scaling_realized: f64,
    pub eta: f64,
    pub k: usize,
    pub algorithm: Algorithm,
    pub cluster_histogram: Vec<ClusterCount>,
}

#[derive(Debug, Clone)]
pub struct BreadthResult {
    /// Selected prompt ids, cluster order then rank order.
    pub x_rep: Vec<String>,
    pub report: BreadthReport,
    pub model: ClusterModel,
}

pub fn compress_breadth(corpus: &Corpus, embeddings: &EmbeddingMatrix, cfg: &BreadthConfig) -> Result<BreadthResult> {
    let ids: Vec<String> = corpus.prompts.iter().map(|p| p.id.clone()).collect();
    let x = embeddings.select(&ids)?;
    let k = cfg.k.unwrap_or_else(|| desk_default_clusters(ids.len()));
    let model = clustering::fit(&x, &ClusterConfig::new(cfg.algorithm, k, cfg.seed))?;
    let selection = clustering::rank_select(&x, &model, cfg.eta, cfg.quota)?;

    let cluster_histogram = selection
        .cluster_sizes
        .iter()
        .zip(&selection.per_cluster_counts)
        .enumerate()
        .map(|(cluster, (&size, &selected))| ClusterCount { cluster, size, selected })
        .collect();
    let report = BreadthReport {
        original_breadth: ids.len(),
        compressed_breadth: selection.len(),
        scaling_realized: selection.len() as f64 / ids.len() as f64,
        eta: cfg.eta,
        k,
        algorithm: cfg.algorithm,
        cluster_histogram,
    };
    Ok(BreadthResult {
        x_rep: selection.selected_ids,
        report,
        model,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::corpus::Prompt;
    use crate::embedder::squared_distance;

    /// Ten tight blobs of ten prompts on well-separated centers.
    fn planted() -> (Corpus, EmbeddingMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut prompts = Vec::new();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for b in 0..10 {
            for j in 0..10 {
                prompts.push(Prompt {
                    id: format!("b{b}-{j}"),
                    text: format!("blob {b} item {j}"),
                });
                let mut row = vec![0.0; 10];
                row[b] = 20.0;
                row.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
                rows.push(row);
                labels.push(b);
            }
        }
        let ids = prompts.iter().map(|p| p.id.clone()).collect();
        (
            Corpus::new(prompts, vec![], vec![]).unwrap(),
            EmbeddingMatrix::from_rows(ids, rows).unwrap(),
            labels,
        )
    }

    #[test]
    fn one_representative_per_planted_blob() {
        let (corpus, emb, labels) = planted();
        let cfg = BreadthConfig {
            k: Some(10),
            eta: 0.1,
            seed: 3,
            ..Default::default()
        };
        let out = compress_breadth(&corpus, &emb, &cfg).unwrap();
        assert_eq!(out.x_rep.len(), 10);

        // Oracle: each blob's member closest to the blob mean.
        let index = emb.index_of();
        let mut expected = HashSet::new();
        for b in 0..10 {
            let members: Vec<usize> = (0..100).filter(|&i| labels[i] == b).collect();
            let mut mean = vec![0.0; 10];
            for &i in &members {
                mean.iter_mut().zip(emb.row(i)).for_each(|(m, v)| *m += v / members.len() as f64);
            }
            let best = members
                .iter()
                .min_by(|&&a, &&c| squared_distance(emb.row(a), &mean).total_cmp(&squared_distance(emb.row(c), &mean)))
                .unwrap();
            expected.insert(emb.ids()[*best].clone());
        }
        let got: HashSet<String> = out.x_rep.iter().cloned().collect();
        assert_eq!(got, expected);
        for id in &out.x_rep {
            assert!(index.contains_key(id.as_str()));
        }
    }

    #[test]
    fn eta_one_keeps_everything() {
        let (corpus, emb, _) = planted();
        let cfg = BreadthConfig {
            k: Some(10),
            eta: 1.0,
            ..Default::default()
        };
        let out = compress_breadth(&corpus, &emb, &cfg).unwrap();
        assert_eq!(out.x_rep.len(), 100);
        assert_eq!(out.report.scaling_realized, 1.0);
    }

    #[test]
    fn coverage_and_no_duplicates() {
        let (corpus, emb, _) = planted();
        for algo in [Algorithm::KMeans, Algorithm::KMedoids, Algorithm::Spectral] {
            let cfg = BreadthConfig {
                k: Some(7),
                eta: 0.05,
                algorithm: algo,
                seed: 1,
                ..Default::default()
            };
            let out = compress_breadth(&corpus, &emb, &cfg).unwrap();
            let unique: HashSet<_> = out.x_rep.iter().collect();
            assert_eq!(unique.len(), out.x_rep.len());
            assert!(out.report.cluster_histogram.iter().all(|c| c.size == 0 || c.selected >= 1));
            assert_eq!(
                out.report.compressed_breadth,
                out.report.cluster_histogram.iter().map(|c| c.selected).sum::<usize>()
            );
        }
    }

    #[test]
    fn desk_default_cluster_count() {
        assert_eq!(desk_default_clusters(100), 2);
        assert_eq!(desk_default_clusters(50_000), 100);
        assert_eq!(desk_default_clusters(1), 1);
    }
}
