//! Rademacher random projection of Adam-preconditioned per-sample
//! gradients.
//!
//! The `P x d` sign matrix is never stored: entry `(i, j)` is bit `j % 64`
//! of a 64-bit word hashed from `(seed, i, j / 64)`, mapped to `+1` / `-1`.
//! Projections are scaled by `1 / sqrt(d)` so squared norms are preserved
//! in expectation.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PreferencePair};
use crate::embedder::{splitmix64, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::toy_policy::{Checkpoint, LossKind, Sample};

pub const FULL_PROJECTION_DIM: usize = 8192;
pub const DESK_PROJECTION_DIM: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionMatrix {
    pub source_dim: usize,
    pub target_dim: usize,
    pub seed: u64,
}

impl ProjectionMatrix {
    pub fn new(source_dim: usize, target_dim: usize, seed: u64) -> Self {
        ProjectionMatrix {
            source_dim,
            target_dim,
            seed,
        }
    }

    fn words_per_row(&self) -> usize {
        self.target_dim.div_ceil(64)
    }

    fn word(&self, row: usize, block: usize) -> u64 {
        let row_key = splitmix64(splitmix64(self.seed) ^ (row as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        splitmix64(row_key ^ splitmix64(block as u64))
    }

    /// Entry `(i, j)` of the unscaled sign matrix.
    pub fn sign(&self, i: usize, j: usize) -> i8 {
        if (self.word(i, j / 64) >> (j % 64)) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Materializes the unscaled sign matrix, row-major `P x d`. Only
    /// sensible for small shapes.
    pub fn dump(&self) -> Vec<Vec<i8>> {
        (0..self.source_dim)
            .map(|i| (0..self.target_dim).map(|j| self.sign(i, j)).collect())
            .collect()
    }

    pub fn project(&self, gamma: &[f64]) -> Result<Vec<f64>> {
        Ok(self.project_batch(&[gamma])?.pop().expect("one input, one output"))
    }

    /// Projects many vectors, generating each sign word once. Parallel
    /// over 64-column blocks; each output is accumulated in source-index
    /// order, so results do not depend on scheduling.
    pub fn project_batch<V: AsRef<[f64]> + Sync>(&self, gammas: &[V]) -> Result<Vec<Vec<f64>>> {
        for g in gammas {
            if g.as_ref().len() != self.source_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.source_dim,
                    found: g.as_ref().len(),
                });
            }
        }
        let d = self.target_dim;
        let n = gammas.len();
        let scale = 1.0 / (d as f64).sqrt();
        let blocks: Vec<Vec<f64>> = (0..self.words_per_row())
            .into_par_iter()
            .map(|block| {
                let width = (d - block * 64).min(64);
                let mut acc = vec![0.0; n * width];
                let mut signs = [0.0f64; 64];
                for i in 0..self.source_dim {
                    let w = self.word(i, block);
                    for (b, s) in signs.iter_mut().enumerate().take(width) {
                        *s = if (w >> b) & 1 == 1 { 1.0 } else { -1.0 };
                    }
                    for (s_idx, g) in gammas.iter().enumerate() {
                        let gi = g.as_ref()[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let out = &mut acc[s_idx * width..(s_idx + 1) * width];
                        for (o, s) in out.iter_mut().zip(&signs[..width]) {
                            *o += gi * s;
                        }
                    }
                }
                acc
            })
            .collect();

        let mut out = vec![vec![0.0; d]; n];
        for (block, acc) in blocks.iter().enumerate() {
            let start = block * 64;
            let width = (d - start).min(64);
            for (s_idx, row) in out.iter_mut().enumerate() {
                for (o, v) in row[start..start + width].iter_mut().zip(&acc[s_idx * width..(s_idx + 1) * width]) {
                    *o = v * scale;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JlReport {
    pub source_dim: usize,
    pub target_dim: usize,
    pub n_pairs: usize,
    pub eps: f64,
    /// Share of pairs whose squared distance ratio lies in [1 - eps, 1 + eps].
    pub fraction_within: f64,
    pub mean_ratio: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Projects random Gaussian vector pairs and compares squared distances
/// before and after.
pub fn jl_distortion_check(source_dim: usize, target_dim: usize, n_pairs: usize, eps: f64, seed: u64) -> Result<JlReport> {
    if n_pairs == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Projection is linear, so projecting x - y is projecting the pair.
    let diffs: Vec<Vec<f64>> = (0..n_pairs)
        .map(|_| {
            (0..source_dim)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    let y: f64 = StandardNormal.sample(&mut rng);
                    x - y
                })
                .collect()
        })
        .collect();
    let proj = ProjectionMatrix::new(source_dim, target_dim, splitmix64(seed));
    let projected = proj.project_batch(&diffs)?;
    let ratios: Vec<f64> = diffs
        .iter()
        .zip(&projected)
        .map(|(a, b)| squared_norm(b) / squared_norm(a))
        .collect();
    let within = ratios.iter().filter(|&&r| (1.0 - eps..=1.0 + eps).contains(&r)).count();
    Ok(JlReport {
        source_dim,
        target_dim,
        n_pairs,
        eps,
        fraction_within: within as f64 / n_pairs as f64,
        mean_ratio: ratios.iter().sum::<f64>() / n_pairs as f64,
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Mean of `|project(x)|^2 / |x|^2` for one fixed random `x` over `trials`
/// independently seeded projections.
pub fn mean_norm_ratio(source_dim: usize, target_dim: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..source_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let base = squared_norm(&x);
    let ratios: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let p = ProjectionMatrix::new(source_dim, target_dim, seed.wrapping_add(t + 1));
            p.project(&x).map(|v| squared_norm(&v) / base)
        })
        .collect::<Result<_>>()?;
    Ok(ratios.iter().sum::<f64>() / trials as f64)
}

fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientFeature {
    pub sample_id: String,
    pub vector: Vec<f64>,
}

const FEATURE_CHUNK: usize = 256;

/// Adam-preconditioned gradient of one pair against the checkpoint's
/// optimizer state; the state is read, never advanced.
pub fn pair_gamma(pair: &PreferencePair, corpus: &Corpus, checkpoint: &Checkpoint, kind: LossKind) -> Result<Vec<f64>> {
    let prompts = corpus.prompt_index();
    let responses = corpus.response_index();
    pair_gamma_indexed(pair, &prompts, &responses, checkpoint, kind)
}

fn pair_gamma_indexed(
    pair: &PreferencePair,
    prompts: &HashMap<&str, &crate::corpus::Prompt>,
    responses: &HashMap<&str, &crate::corpus::Response>,
    checkpoint: &Checkpoint,
    kind: LossKind,
) -> Result<Vec<f64>> {
    let prompt = prompts
        .get(pair.prompt_id.as_str())
        .ok_or_else(|| Error::DanglingReference(pair.prompt_id.clone()))?;
    let chosen = responses
        .get(pair.chosen.as_str())
        .ok_or_else(|| Error::DanglingReference(pair.chosen.clone()))?;
    let rejected = responses
        .get(pair.rejected.as_str())
        .ok_or_else(|| Error::DanglingReference(pair.rejected.clone()))?;
    let sample = Sample::Pair {
        prompt: &prompt.text,
        chosen: &chosen.text,
        rejected: &rejected.text,
    };
    let grad = checkpoint.policy.per_sample_grad(sample, kind)?;
    checkpoint.adam.gamma(&grad)
}

/// One projected feature per pair, in input order, keyed by `pair.key()`.
pub fn compute_features(
    pairs: &[PreferencePair],
    corpus: &Corpus,
    checkpoint: &Checkpoint,
    proj: &ProjectionMatrix,
    kind: LossKind,
) -> Result<Vec<GradientFeature>> {
    if proj.source_dim != checkpoint.policy.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: checkpoint.policy.param_dim(),
            found: proj.source_dim,
        });
    }
    let prompts = corpus.prompt_index();
    let responses = corpus.response_index();
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(FEATURE_CHUNK) {
        let gammas: Vec<Vec<f64>> = chunk
            .par_iter()
            .map(|p| pair_gamma_indexed(p, &prompts, &responses, checkpoint, kind))
            .collect::<Result<_>>()?;
        let projected = proj.project_batch(&gammas)?;
        out.extend(chunk.iter().zip(projected).map(|(p, vector)| GradientFeature {
            sample_id: p.key(),
            vector,
        }));
    }
    Ok(out)
}

pub fn features_to_matrix(features: &[GradientFeature]) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_rows(
        features.iter().map(|f| f.sample_id.clone()).collect(),
        features.iter().map(|f| f.vector.clone()).collect(),
    )
}

pub fn matrix_to_features(m: &EmbeddingMatrix) -> Vec<GradientFeature> {
    m.ids()
        .iter()
        .zip(m.rows())
        .map(|(id, row)| GradientFeature {
            sample_id: id.clone(),
            vector: row.to_vec(),
        })
        .collect()
}
