//! Depth augmentation: scored-pair construction, gradient-cluster pair
//! selection, and weight-based per-prompt depth allocation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{self, Algorithm, ClusterConfig, QuotaRule, SelectionSet};
use crate::corpus::{PreferencePair, Response};
use crate::embedder::{cosine, TextEmbedder};
use crate::error::{Error, Result};
use crate::gradfeat::{features_to_matrix, GradientFeature};

/// Gradient-feature cluster count used at full scale.
pub const FULL_GRADIENT_CLUSTERS: usize = 50;
pub const DEFAULT_KEEP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KeepScope {
    /// Truncate the pooled pairs of all prompts at one quantile.
    #[default]
    Global,
    /// Truncate each prompt's pairs separately.
    Prompt,
}

impl FromStr for KeepScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(KeepScope::Global),
            "prompt" => Ok(KeepScope::Prompt),
            other => Err(Error::InvalidConfig(format!("unknown keep scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DepthMethod {
    #[default]
    Gradient,
    Length,
    Semantic,
    Uniform,
}

impl fmt::Display for DepthMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepthMethod::Gradient => "gradient",
            DepthMethod::Length => "length",
            DepthMethod::Semantic => "semantic",
            DepthMethod::Uniform => "uniform",
        })
    }
}

impl FromStr for DepthMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(DepthMethod::Gradient),
            "length" => Ok(DepthMethod::Length),
            "semantic" => Ok(DepthMethod::Semantic),
            "uniform" => Ok(DepthMethod::Uniform),
            other => Err(Error::InvalidConfig(format!("unknown depth method `{other}`"))),
        }
    }
}

/// Kept pairs per prompt, each list sorted by score difference descending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairPool {
    pub by_prompt: BTreeMap<String, Vec<PreferencePair>>,
}

impl PairPool {
    pub fn len(&self) -> usize {
        self.by_prompt.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Prompt-id order, then score-difference order.
    pub fn pairs(&self) -> impl Iterator<Item = &PreferencePair> {
        self.by_prompt.values().flatten()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = PreferencePair>) -> Self {
        let mut by_prompt: BTreeMap<String, Vec<PreferencePair>> = BTreeMap::new();
        for p in pairs {
            by_prompt.entry(p.prompt_id.clone()).or_default().push(p);
        }
        for list in by_prompt.values_mut() {
            list.sort_by(pair_order);
        }
        PairPool { by_prompt }
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.by_prompt.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }
}

/// Larger score difference first; ties by (prompt, chosen, rejected).
fn pair_order(a: &PreferencePair, b: &PreferencePair) -> std::cmp::Ordering {
    b.score_diff
        .total_cmp(&a.score_diff)
        .then_with(|| a.prompt_id.cmp(&b.prompt_id))
        .then_with(|| a.chosen.cmp(&b.chosen))
        .then_with(|| a.rejected.cmp(&b.rejected))
}

fn keep_count(total: usize, fraction: f64) -> usize {
    (((fraction * total as f64) - 1e-9).ceil().max(0.0) as usize).min(total)
}

/// Every pair of distinct-score responses of a prompt, higher score as
/// chosen.
pub fn enumerate_pairs(responses: &[Response]) -> Result<Vec<PreferencePair>> {
    for r in responses {
        if r.score.is_none() {
            return Err(Error::UnscoredResponse(r.id.clone()));
        }
    }
    let mut out = Vec::new();
    for (i, a) in responses.iter().enumerate() {
        for b in &responses[i + 1..] {
            let (sa, sb) = (a.score.unwrap(), b.score.unwrap());
            if sa > sb {
                out.push(PreferencePair::from_responses(a, b)?);
            } else if sb > sa {
                out.push(PreferencePair::from_responses(b, a)?);
            }
        }
    }
    Ok(out)
}

/// Builds all scored pairs and keeps the `keep_fraction` with the largest
/// score differences (rounded up).
pub fn build_pairs(
    responses_by_prompt: &BTreeMap<String, Vec<Response>>,
    keep_fraction: f64,
    scope: KeepScope,
) -> Result<PairPool> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidFraction(keep_fraction));
    }
    let mut kept = Vec::new();
    let mut all = Vec::new();
    for responses in responses_by_prompt.values() {
        let mut pairs = enumerate_pairs(responses)?;
        match scope {
            KeepScope::Prompt => {
                pairs.sort_by(pair_order);
                pairs.truncate(keep_count(pairs.len(), keep_fraction));
                kept.extend(pairs);
            }
            KeepScope::Global => all.extend(pairs),
        }
    }
    if scope == KeepScope::Global {
        all.sort_by(pair_order);
        all.truncate(keep_count(all.len(), keep_fraction));
        kept = all;
    }
    Ok(PairPool::from_pairs(kept))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientSelectConfig {
    pub g: usize,
    pub eta: f64,
    pub algorithm: Algorithm,
    pub seed: u64,
    #[serde(default)]
    pub quota: QuotaRule,
}

impl Default for GradientSelectConfig {
    fn default() -> Self {
        GradientSelectConfig {
            g: FULL_GRADIENT_CLUSTERS,
            eta: 0.1,
            algorithm: Algorithm::KMeans,
            seed: 0,
            quota: QuotaRule::Ceil,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DynamicSelection {
    /// Selected pairs in pool order.
    pub pairs: Vec<PreferencePair>,
    pub selection: SelectionSet,
    /// Selected pair count per prompt (prompts with none are absent).
    pub realized_depths: BTreeMap<String, usize>,
}

/// Clusters the pairs' gradient features and keeps, per cluster, the pairs
/// nearest the centroid. `features` must follow `pool.pairs()` order.
pub fn gradient_depth_select(
    pool: &PairPool,
    features: &[GradientFeature],
    cfg: &GradientSelectConfig,
) -> Result<DynamicSelection> {
    let mismatch = || Error::FeaturePairMismatch {
        features: features.len(),
        pairs: pool.len(),
    };
    if features.len() != pool.len() {
        return Err(mismatch());
    }
    if pool.pairs().zip(features).any(|(p, f)| p.key() != f.sample_id) {
        return Err(mismatch());
    }
    let x = features_to_matrix(features)?;
    let model = clustering::fit(&x, &ClusterConfig::new(cfg.algorithm, cfg.g, cfg.seed))?;
    let selection = clustering::rank_select(&x, &model, cfg.eta, cfg.quota)?;

    let chosen: std::collections::HashSet<&str> = selection.selected_ids.iter().map(String::as_str).collect();
    let pairs: Vec<PreferencePair> = pool.pairs().filter(|p| chosen.contains(p.key().as_str())).cloned().collect();
    let mut realized_depths = BTreeMap::new();
    for p in &pairs {
        *realized_depths.entry(p.prompt_id.clone()).or_insert(0) += 1;
    }
    Ok(DynamicSelection {
        pairs,
        selection,
        realized_depths,
    })
}

/// Raises every pooled prompt to at least `min_depth` selected pairs by
/// adding its largest-difference unselected pairs. Output is in pool order.
pub fn enforce_min_depth(pool: &PairPool, selected: &[PreferencePair], min_depth: usize) -> Vec<PreferencePair> {
    let chosen: std::collections::HashSet<String> = selected.iter().map(PreferencePair::key).collect();
    let mut out = Vec::with_capacity(selected.len());
    for pairs in pool.by_prompt.values() {
        let have = pairs.iter().filter(|p| chosen.contains(&p.key())).count();
        let mut extra = min_depth.saturating_sub(have);
        for p in pairs {
            if chosen.contains(&p.key()) {
                out.push(p.clone());
            } else if extra > 0 {
                out.push(p.clone());
                extra -= 1;
            }
        }
    }
    out
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Weights proportional to each prompt's response-length variance.
pub fn length_variance_weights(responses_by_prompt: &BTreeMap<String, Vec<Response>>) -> Result<BTreeMap<String, f64>> {
    let mut variances = BTreeMap::new();
    for (pid, responses) in responses_by_prompt {
        if responses.len() < 2 {
            return Err(Error::TooFewResponses(pid.clone()));
        }
        let lengths: Vec<f64> = responses.iter().map(|r| r.token_length as f64).collect();
        variances.insert(pid.clone(), sample_variance(&lengths));
    }
    let total: f64 = variances.values().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateWeights("every prompt has zero length variance".into()));
    }
    Ok(variances.into_iter().map(|(k, v)| (k, v / total)).collect())
}

/// Mean cosine over all unordered pairs of rows.
pub fn mean_pairwise_cosine(rows: &[&[f64]]) -> Result<f64> {
    let k = rows.len();
    if k < 2 {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += cosine(rows[i], rows[j])?;
        }
    }
    Ok(2.0 * sum / (k * (k - 1)) as f64)
}

/// Weights inversely proportional to mean similarity.
pub fn weights_from_similarity(mean_similarity: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    for (pid, &s) in mean_similarity {
        if s <= 0.0 {
            return Err(Error::ZeroSimilarity(pid.clone()));
        }
    }
    let total: f64 = mean_similarity.values().map(|s| 1.0 / s).sum();
    Ok(mean_similarity.iter().map(|(k, s)| (k.clone(), (1.0 / s) / total)).collect())
}

/// Weights inversely proportional to each prompt's mean pairwise
/// response-embedding cosine.
pub fn semantic_similarity_weights(
    responses_by_prompt: &BTreeMap<String, Vec<Response>>,
    embedder: &dyn TextEmbedder,
) -> Result<BTreeMap<String, f64>> {
    let mut sims = BTreeMap::new();
    for (pid, responses) in responses_by_prompt {
        if responses.len() < 2 {
            return Err(Error::TooFewResponses(pid.clone()));
        }
        let ids: Vec<String> = responses.iter().map(|r| r.id.clone()).collect();
        let texts: Vec<&str> = responses.iter().map(|r| r.text.as_str()).collect();
        let m = embedder.embed(&ids, &texts)?;
        let rows: Vec<&[f64]> = m.rows().collect();
        sims.insert(pid.clone(), mean_pairwise_cosine(&rows)?);
    }
    weights_from_similarity(&sims)
}

pub fn uniform_weights<'a>(prompt_ids: impl IntoIterator<Item = &'a String>) -> BTreeMap<String, f64> {
    let ids: Vec<&String> = prompt_ids.into_iter().collect();
    let w = 1.0 / ids.len() as f64;
    ids.into_iter().map(|id| (id.clone(), w)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub method: DepthMethod,
    pub weights: BTreeMap<String, f64>,
    pub depths: BTreeMap<String, usize>,
    pub budget: usize,
    pub min_depth: usize,
}

impl AllocationPlan {
    pub fn total(&self) -> usize {
        self.depths.values().sum()
    }

    /// Depth value -> number of prompts at that depth.
    pub fn histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for &d in self.depths.values() {
            *h.entry(d).or_insert(0) += 1;
        }
        h
    }
}

/// Unclamped allocation `ceil(w * budget)`.
pub fn ceil_share(weight: f64, budget: usize) -> usize {
    ((weight * budget as f64) - 1e-9).ceil().max(0.0) as usize
}

/// `k_i = ceil(w_i * N)`, raised to `min_depth`, then capped by the
/// prompt's available pairs when `available` is given.
pub fn allocate_depth(
    method: DepthMethod,
    weights: &BTreeMap<String, f64>,
    budget: usize,
    min_depth: usize,
    available: Option<&BTreeMap<String, usize>>,
) -> Result<AllocationPlan> {
    if budget == 0 {
        return Err(Error::InvalidConfig("depth budget must be at least 1".into()));
    }
    if weights.values().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::DegenerateWeights("weights must be finite and non-negative".into()));
    }
    let depths = weights
        .iter()
        .map(|(pid, &w)| {
            let mut k = ceil_share(w, budget).max(min_depth);
            if let Some(avail) = available {
                k = k.min(avail.get(pid).copied().unwrap_or(0));
            }
            (pid.clone(), k)
        })
        .collect();
    Ok(AllocationPlan {
        method,
        weights: weights.clone(),
        depths,
        budget,
        min_depth,
    })
}

/// Top-`k_i` pairs of each prompt by score difference.
pub fn select_by_allocation(pool: &PairPool, plan: &AllocationPlan) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for (pid, pairs) in &pool.by_prompt {
        let k = plan.depths.get(pid).copied().unwrap_or(0);
        out.extend(pairs.iter().take(k).cloned());
    }
    out
}
