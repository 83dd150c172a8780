//! Synthetic corpora with planted topic blobs, and selection-quality
//! metrics measured against the planted labels.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PreferencePair, Prompt, Response};
use crate::embedder::{l2_norm, save_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreModel {
    /// Scores are a permutation of 1..=k, so every response pair differs.
    #[default]
    Distinct,
    /// Integer 1..=10 scores from response quality plus Gaussian noise;
    /// ties are common.
    ClusteredNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_prompts: usize,
    pub n_blobs: usize,
    /// Distance of every blob center from the origin.
    pub blob_separation: f64,
    pub blob_std: f64,
    pub dim: usize,
    pub responses_per_prompt: usize,
    pub score_model: ScoreModel,
    /// Blob `b` receives prompts in proportion to `(b + 1)^-size_skew`;
    /// zero gives equal blobs.
    pub size_skew: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_prompts: 1000,
            n_blobs: 10,
            blob_separation: 10.0,
            blob_std: 1.0,
            dim: 16,
            responses_per_prompt: 16,
            score_model: ScoreModel::Distinct,
            size_skew: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.n_prompts == 0 {
            return bad("n_prompts must be positive");
        }
        if self.n_blobs == 0 || self.n_blobs > self.n_prompts {
            return bad("n_blobs must lie in [1, n_prompts]");
        }
        if !(self.blob_separation > 0.0) {
            return bad("blob_separation must be positive");
        }
        if !(self.blob_std >= 0.0) || self.dim < 2 {
            return bad("blob_std must be non-negative and dim at least 2");
        }
        if self.size_skew < 0.0 || !self.size_skew.is_finite() {
            return bad("size_skew must be finite and non-negative");
        }
        Ok(())
    }

    /// Prompts per blob: proportional to the skew weights, each at least one,
    /// summing to `n_prompts`.
    pub fn blob_sizes(&self) -> Vec<usize> {
        let w: Vec<f64> = (0..self.n_blobs).map(|b| ((b + 1) as f64).powf(-self.size_skew)).collect();
        let total: f64 = w.iter().sum();
        let spare = self.n_prompts - self.n_blobs;
        let mut sizes: Vec<usize> = w.iter().map(|x| 1 + (x / total * spare as f64).floor() as usize).collect();
        let mut short = self.n_prompts - sizes.iter().sum::<usize>();
        let mut b = 0;
        while short > 0 {
            sizes[b % self.n_blobs] += 1;
            short -= 1;
            b += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: Corpus,
    /// Planted prompt embeddings, not normalized.
    pub embeddings: EmbeddingMatrix,
    /// Prompt id -> planted blob.
    pub labels: BTreeMap<String, usize>,
}

impl SyntheticData {
    /// Writes `corpus.jsonl`, `embeddings.emb` and `labels.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.corpus.save(dir.join("corpus.jsonl"))?;
        save_embeddings(dir.join("embeddings.emb"), &self.embeddings)?;
        std::fs::write(dir.join("labels.json"), serde_json::to_string_pretty(&self.labels)?)?;
        Ok(())
    }
}

const BLOB_WORDS: usize = 12;
const RESPONSE_WORDS: usize = 30;

/// Planted-blob corpus.
///
/// Prompt `p<i>` of blob `b` has embedding `center_b + N(0, std^2)` and
/// text drawn from blob-specific words. Each prompt gets `k` scored
/// candidate responses mixing "good" and "bad" words, with the score
/// tracking the good share, plus two original preference pairs
/// (best vs worst, second best vs second worst).
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.n_blobs)
        .map(|_| {
            let v: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = l2_norm(&v);
            v.into_iter().map(|x| x / n * spec.blob_separation).collect()
        })
        .collect();
    let noise = Normal::new(0.0, spec.blob_std).map_err(|e| Error::InvalidSpec(e.to_string()))?;

    let mut labels_vec: Vec<usize> = spec
        .blob_sizes()
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    labels_vec.shuffle(&mut rng);

    let width = (spec.n_prompts - 1).to_string().len();
    let mut prompts = Vec::with_capacity(spec.n_prompts);
    let mut rows = Vec::with_capacity(spec.n_prompts);
    let mut responses = Vec::new();
    let mut pairs = Vec::new();
    let mut labels = BTreeMap::new();
    let k = spec.responses_per_prompt;

    for (i, &b) in labels_vec.iter().enumerate() {
        let id = format!("p{i:0width$}");
        let n_words = rng.random_range(4..=8);
        let words: Vec<String> = (0..n_words)
            .map(|_| format!("t{b}w{}", rng.random_range(0..BLOB_WORDS)))
            .collect();
        prompts.push(Prompt {
            id: id.clone(),
            text: format!("topic{b} {}", words.join(" ")),
        });
        rows.push(centers[b].iter().map(|c| c + noise.sample(&mut rng)).collect::<Vec<f64>>());
        labels.insert(id.clone(), b);

        let mut ranks: Vec<usize> = (0..k).collect();
        ranks.shuffle(&mut rng);
        let mut mine = Vec::with_capacity(k);
        for (j, &rank) in ranks.iter().enumerate() {
            let quality = (rank as f64 + 0.5) / k.max(1) as f64;
            let len = rng.random_range(3..=24);
            let text: Vec<String> = (0..len)
                .map(|_| {
                    let w = rng.random_range(0..RESPONSE_WORDS);
                    if rng.random::<f64>() < quality {
                        format!("good{w}")
                    } else {
                        format!("bad{w}")
                    }
                })
                .collect();
            let score = match spec.score_model {
                ScoreModel::Distinct => rank as f64 + 1.0,
                ScoreModel::ClusteredNoise => {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    (10.0 * quality + n).round().clamp(1.0, 10.0)
                }
            };
            mine.push(Response::new(format!("{id}/r{j:02}"), id.clone(), text.join(" "), Some(score)));
        }

        let mut by_score: Vec<&Response> = mine.iter().collect();
        by_score.sort_by(|a, b| b.score.unwrap().total_cmp(&a.score.unwrap()).then(a.id.cmp(&b.id)));
        for t in 0..2.min(k / 2) {
            let (hi, lo) = (by_score[t], by_score[k - 1 - t]);
            if hi.score > lo.score {
                pairs.push(PreferencePair::from_responses(hi, lo)?);
            }
        }
        responses.extend(mine);
    }

    let ids = prompts.iter().map(|p| p.id.clone()).collect();
    Ok(SyntheticData {
        corpus: Corpus::new(prompts, responses, pairs)?,
        embeddings: EmbeddingMatrix::from_rows(ids, rows)?,
        labels,
    })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len() as f64;
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub selected: usize,
    /// Share of planted blobs with at least one selected prompt.
    pub blob_coverage: f64,
    /// Mean pairwise cosine among selected embeddings.
    pub redundancy: f64,
    pub size_ratio: f64,
    /// Depth -> number of selected prompts with that depth.
    pub depth_histogram: BTreeMap<usize, usize>,
    pub random_coverage: Option<f64>,
    pub random_redundancy: Option<f64>,
}

/// Mean pairwise cosine of the given rows via the norm of their unit sum.
/// Fewer than two rows give zero.
pub fn redundancy(rows: &[&[f64]]) -> Result<f64> {
    let m = rows.len();
    if m < 2 {
        return Ok(0.0);
    }
    let dim = rows[0].len();
    let mut sum = vec![0.0; dim];
    for r in rows {
        let n = l2_norm(r);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        sum.iter_mut().zip(r.iter()).for_each(|(s, v)| *s += v / n);
    }
    let total: f64 = sum.iter().map(|x| x * x).sum();
    Ok((total - m as f64) / (m * (m - 1)) as f64)
}

fn coverage(ids: &[&str], labels: &BTreeMap<String, usize>) -> Result<f64> {
    let all: BTreeSet<usize> = labels.values().copied().collect();
    let mut hit = BTreeSet::new();
    for id in ids {
        hit.insert(*labels.get(*id).ok_or_else(|| Error::UnknownId(id.to_string()))?);
    }
    Ok(hit.len() as f64 / all.len().max(1) as f64)
}

/// Scores a prompt selection against planted labels. With
/// `baseline_seed`, also scores a uniformly random selection of the same
/// size.
pub fn evaluate_selection(
    selected_ids: &[String],
    labels: &BTreeMap<String, usize>,
    embeddings: &EmbeddingMatrix,
    depths: Option<&BTreeMap<String, usize>>,
    baseline_seed: Option<u64>,
) -> Result<SelectionMetrics> {
    let index = embeddings.index_of();
    let rows_of = |ids: &[&str]| -> Result<Vec<&[f64]>> {
        ids.iter()
            .map(|id| {
                index
                    .get(id)
                    .map(|&i| embeddings.row(i))
                    .ok_or_else(|| Error::UnknownId(id.to_string()))
            })
            .collect()
    };
    let ids: Vec<&str> = selected_ids.iter().map(String::as_str).collect();
    let rows = rows_of(&ids)?;
    let blob_coverage = coverage(&ids, labels)?;
    let red = redundancy(&rows)?;

    let mut depth_histogram = BTreeMap::new();
    if let Some(d) = depths {
        for id in &ids {
            *depth_histogram.entry(d.get(*id).copied().unwrap_or(0)).or_insert(0) += 1;
        }
    }

    let (random_coverage, random_redundancy) = match baseline_seed {
        Some(seed) => {
            let pool: Vec<&str> = labels.keys().map(String::as_str).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pick: Vec<&str> = pool.choose_multiple(&mut rng, ids.len()).copied().collect();
            (Some(coverage(&pick, labels)?), Some(redundancy(&rows_of(&pick)?)?))
        }
        None => (None, None),
    };

    Ok(SelectionMetrics {
        selected: ids.len(),
        blob_coverage,
        redundancy: red,
        size_ratio: ids.len() as f64 / labels.len().max(1) as f64,
        depth_histogram,
        random_coverage,
        random_redundancy,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::clustering::kmeans_fit;
    use crate::depth::{build_pairs, KeepScope};

    #[test]
    fn single_blob_labels() {
        let d = synth_generate(&SyntheticSpec {
            n_prompts: 30,
            n_blobs: 1,
            responses_per_prompt: 4,
            ..Default::default()
        })
        .unwrap();
        assert!(d.labels.values().all(|&l| l == 0));
    }

    #[test]
    fn separated_blobs_recovered_by_kmeans() {
        let d = synth_generate(&SyntheticSpec {
            n_prompts: 200,
            n_blobs: 5,
            blob_separation: 30.0,
            responses_per_prompt: 2,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let m = kmeans_fit(&d.embeddings, 5, 0, 300, 1e-6).unwrap();
        let planted: Vec<usize> = d.embeddings.ids().iter().map(|id| d.labels[id]).collect();
        assert_abs_diff_eq!(adjusted_rand_index(&m.assignments, &planted), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn distinct_scores_give_120_pairs() {
        let d = synth_generate(&SyntheticSpec {
            n_prompts: 5,
            n_blobs: 2,
            ..Default::default()
        })
        .unwrap();
        let pool = build_pairs(&d.corpus.responses_by_prompt(), 1.0, KeepScope::Global).unwrap();
        assert!(pool.counts().values().all(|&c| c == 120));
        assert_eq!(d.corpus.pairs.len(), 10);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            n_prompts: 40,
            n_blobs: 4,
            score_model: ScoreModel::ClusteredNoise,
            size_skew: 1.0,
            seed: 9,
            ..Default::default()
        };
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(spec.blob_sizes().iter().sum::<usize>(), 40);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SyntheticSpec { n_blobs: 0, ..Default::default() },
            SyntheticSpec { n_prompts: 3, n_blobs: 4, ..Default::default() },
            SyntheticSpec { blob_separation: 0.0, ..Default::default() },
        ] {
            assert!(matches!(synth_generate(&spec), Err(Error::InvalidSpec(_))));
        }
    }

    #[test]
    fn ari_fixtures() {
        assert_abs_diff_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        // Hand-computed: contingency [[1,1],[1,1]] -> index 0, expected 2/3.
        assert_abs_diff_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]), -0.5, epsilon = 1e-12);
    }

    fn fixture() -> (EmbeddingMatrix, BTreeMap<String, usize>) {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![-1.0, 0.0]];
        let ids: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let labels = ids.iter().cloned().zip([0, 1, 1, 2]).collect();
        (EmbeddingMatrix::from_rows(ids, rows).unwrap(), labels)
    }

    #[test]
    fn metrics_match_hand_values() {
        let (emb, labels) = fixture();
        let all: Vec<String> = labels.keys().cloned().collect();
        let m = evaluate_selection(&all, &labels, &emb, None, None).unwrap();
        assert_eq!((m.blob_coverage, m.size_ratio), (1.0, 1.0));
        // Pair cosines: ab 0, ac s, ad -1, bc s, bd 0, cd -s with s = 1/sqrt(2).
        let s = 0.5f64.sqrt();
        assert_abs_diff_eq!(m.redundancy, (2.0 * s - 1.0 - s) / 6.0, epsilon = 1e-12);

        let one_each: Vec<String> = vec!["a".into(), "b".into(), "d".into()];
        let depths = BTreeMap::from([("a".to_string(), 2), ("b".to_string(), 1)]);
        let m = evaluate_selection(&one_each, &labels, &emb, Some(&depths), Some(0)).unwrap();
        assert_eq!(m.blob_coverage, 1.0);
        assert_abs_diff_eq!(m.size_ratio, 0.75);
        assert_eq!(m.depth_histogram, BTreeMap::from([(0, 1), (1, 1), (2, 1)]));
        assert!(m.random_coverage.is_some());

        assert!(matches!(
            evaluate_selection(&["zz".to_string()], &labels, &emb, None, None),
            Err(Error::UnknownId(_))
        ));
    }
}
