//! A low-rank bigram language model standing in for the fine-tuned policy.
//!
//! Next-token logits after token `p` are row `p` of `W = A B` with
//! `A: V x r` and `B: r x V`. Parameters flatten as `[A row-major, B
//! row-major]`, so the gradient dimension is `2 V r`. `B` starts at zero,
//! which makes the initial next-token distribution uniform.

mod adam;
mod train;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_gamma, AdamHyper, AdamState, DESK_LR, FULL_LR};
pub use train::{sample_responses, sft_train, Checkpoint, GenerationConfig, SftConfig, SftOutcome};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Negative log-likelihood of the (chosen) response.
    Nll,
    /// `-log sigmoid(logp(chosen) - logp(rejected))`.
    #[default]
    PairMargin,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Nll => "nll",
            LossKind::PairMargin => "pair_margin",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nll" => Ok(LossKind::Nll),
            "pair_margin" | "pair-margin" => Ok(LossKind::PairMargin),
            other => Err(Error::InvalidPolicy(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Text-level training or scoring sample.
#[derive(Debug, Clone, Copy)]
pub enum Sample<'a> {
    Single {
        prompt: &'a str,
        response: &'a str,
    },
    Pair {
        prompt: &'a str,
        chosen: &'a str,
        rejected: &'a str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleLoss {
    pub value: f64,
    pub kind: LossKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyParams", into = "PolicyParams")]
pub struct ToyPolicy {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    rank: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyParams {
    vocab: Vec<String>,
    rank: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl TryFrom<PolicyParams> for ToyPolicy {
    type Error = Error;

    fn try_from(p: PolicyParams) -> Result<Self> {
        let v = p.vocab.len();
        if v < 2 || p.rank == 0 || p.a.len() != v * p.rank || p.b.len() != v * p.rank {
            return Err(Error::InvalidPolicy("parameter shapes do not match vocab and rank".into()));
        }
        let index = build_index(&p.vocab)?;
        Ok(ToyPolicy {
            vocab: p.vocab,
            index,
            rank: p.rank,
            a: p.a,
            b: p.b,
        })
    }
}

impl From<ToyPolicy> for PolicyParams {
    fn from(p: ToyPolicy) -> Self {
        PolicyParams {
            vocab: p.vocab,
            rank: p.rank,
            a: p.a,
            b: p.b,
        }
    }
}

fn build_index(vocab: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(vocab.len());
    for (i, t) in vocab.iter().enumerate() {
        if index.insert(t.clone(), i).is_some() {
            return Err(Error::InvalidPolicy(format!("duplicate vocab token `{t}`")));
        }
    }
    Ok(index)
}

impl ToyPolicy {
    /// Policy over exactly `vocab`. `A` is drawn N(0, 0.1^2) from `seed`;
    /// `B` is zero.
    pub fn new(vocab: Vec<String>, rank: usize, seed: u64) -> Result<Self> {
        if vocab.len() < 2 {
            return Err(Error::InvalidPolicy("vocabulary needs at least two tokens".into()));
        }
        if rank == 0 {
            return Err(Error::InvalidPolicy("rank must be at least 1".into()));
        }
        let index = build_index(&vocab)?;
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let a = (0..v * rank).map(|_| normal.sample(&mut rng)).collect();
        Ok(ToyPolicy {
            vocab,
            index,
            rank,
            a,
            b: vec![0.0; v * rank],
        })
    }

    /// Vocabulary of `<bos>`, `<eos>` and every whitespace token in
    /// `texts`, sorted.
    pub fn for_texts<'a>(texts: impl IntoIterator<Item = &'a str>, rank: usize, seed: u64) -> Result<Self> {
        let mut tokens: Vec<String> = texts
            .into_iter()
            .flat_map(str::split_whitespace)
            .filter(|t| *t != BOS && *t != EOS)
            .map(str::to_string)
            .collect();
        tokens.sort();
        tokens.dedup();
        let mut vocab = vec![BOS.to_string(), EOS.to_string()];
        vocab.extend(tokens);
        Self::new(vocab, rank, seed)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Gradient (and parameter) dimension `2 V r`.
    pub fn param_dim(&self) -> usize {
        2 * self.vocab.len() * self.rank
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.a.clone();
        p.extend_from_slice(&self.b);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                found: params.len(),
            });
        }
        let half = self.a.len();
        self.a.copy_from_slice(&params[..half]);
        self.b.copy_from_slice(&params[half..]);
        Ok(())
    }

    pub fn token_id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: usize) -> &str {
        &self.vocab[id]
    }

    /// Logits of the next token after `prev`.
    pub fn logits(&self, prev: usize) -> Vec<f64> {
        let v = self.vocab.len();
        let r = self.rank;
        let arow = &self.a[prev * r..(prev + 1) * r];
        let mut z = vec![0.0; v];
        for (k, &ak) in arow.iter().enumerate() {
            if ak == 0.0 {
                continue;
            }
            for (zj, bkj) in z.iter_mut().zip(&self.b[k * v..(k + 1) * v]) {
                *zj += ak * bkj;
            }
        }
        z
    }

    pub fn next_token_probs(&self, prev: usize) -> Vec<f64> {
        softmax(&self.logits(prev))
    }

    /// (previous token, next token) transitions scored for `response`
    /// after `prompt`. The first response token is conditioned on the last
    /// prompt token (or `<bos>` for an empty prompt). A non-empty response
    /// is followed by `<eos>` when the vocabulary has one; an empty
    /// response has no transitions.
    pub fn transitions(&self, prompt: &str, response: &str) -> Result<Vec<(usize, usize)>> {
        let mut prev = match prompt.split_whitespace().last() {
            Some(t) => self.token_id(t)?,
            None => self.token_id(BOS)?,
        };
        let mut out = Vec::new();
        for tok in response.split_whitespace() {
            let id = self.token_id(tok)?;
            out.push((prev, id));
            prev = id;
        }
        if !out.is_empty() {
            if let Some(&eos) = self.index.get(EOS) {
                out.push((prev, eos));
            }
        }
        Ok(out)
    }

    /// Log-probability of the transitions.
    pub fn log_prob_of(&self, trans: &[(usize, usize)]) -> f64 {
        trans.iter().map(|&(p, y)| log_softmax_at(&self.logits(p), y)).sum()
    }

    pub fn log_prob(&self, prompt: &str, response: &str) -> Result<f64> {
        Ok(self.log_prob_of(&self.transitions(prompt, response)?))
    }

    pub fn loss(&self, sample: Sample<'_>, kind: LossKind) -> Result<SampleLoss> {
        let value = match (sample, kind) {
            (Sample::Single { prompt, response }, LossKind::Nll) => -self.log_prob(prompt, response)?,
            (Sample::Pair { prompt, chosen, .. }, LossKind::Nll) => -self.log_prob(prompt, chosen)?,
            (Sample::Pair { prompt, chosen, rejected }, LossKind::PairMargin) => {
                let margin = self.log_prob(prompt, chosen)? - self.log_prob(prompt, rejected)?;
                softplus(-margin)
            }
            (Sample::Single { .. }, LossKind::PairMargin) => {
                return Err(Error::InvalidPolicy("pair_margin loss needs a response pair".into()))
            }
        };
        Ok(SampleLoss { value, kind })
    }

    /// Adds `scale * d NLL(trans) / d params` into `grad`.
    pub fn accumulate_nll_grad(&self, trans: &[(usize, usize)], scale: f64, grad: &mut [f64]) {
        let v = self.vocab.len();
        let r = self.rank;
        let (ga, gb) = grad.split_at_mut(v * r);
        for &(p, y) in trans {
            let mut dz = self.next_token_probs(p);
            dz[y] -= 1.0;
            let arow = &self.a[p * r..(p + 1) * r];
            for k in 0..r {
                let brow = &self.b[k * v..(k + 1) * v];
                let da: f64 = dz.iter().zip(brow).map(|(d, b)| d * b).sum();
                ga[p * r + k] += scale * da;
                let coef = scale * arow[k];
                if coef != 0.0 {
                    for (g, d) in gb[k * v..(k + 1) * v].iter_mut().zip(&dz) {
                        *g += coef * d;
                    }
                }
            }
        }
    }

    /// Analytic gradient of the per-sample loss with respect to the
    /// flattened parameters.
    pub fn per_sample_grad(&self, sample: Sample<'_>, kind: LossKind) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.param_dim()];
        match (sample, kind) {
            (Sample::Single { prompt, response }, LossKind::Nll)
            | (Sample::Pair { prompt, chosen: response, .. }, LossKind::Nll) => {
                let t = self.transitions(prompt, response)?;
                self.accumulate_nll_grad(&t, 1.0, &mut grad);
            }
            (Sample::Pair { prompt, chosen, rejected }, LossKind::PairMargin) => {
                let tc = self.transitions(prompt, chosen)?;
                let tr = self.transitions(prompt, rejected)?;
                let margin = self.log_prob_of(&tc) - self.log_prob_of(&tr);
                // d/dmargin of softplus(-margin) is -sigmoid(-margin); the
                // margin's gradient is grad NLL(rejected) - grad NLL(chosen).
                let w = sigmoid(-margin);
                let mut gr = vec![0.0; grad.len()];
                self.accumulate_nll_grad(&tc, 1.0, &mut grad);
                self.accumulate_nll_grad(&tr, 1.0, &mut gr);
                grad.iter_mut().zip(&gr).for_each(|(c, r)| *c = w * (*c - r));
            }
            (Sample::Single { .. }, LossKind::PairMargin) => {
                return Err(Error::InvalidPolicy("pair_margin loss needs a response pair".into()))
            }
        }
        Ok(grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub coords: usize,
    /// Coordinates with `max(|fd|, |g|) >= floor`, the only ones scored
    /// by relative error.
    pub resolved: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Compares `per_sample_grad` against central differences with step `h` on
/// `coords` random coordinates. Relative error is
/// `|fd - g| / max(|fd|, |g|)`, taken over coordinates whose magnitude
/// reaches `floor`; below it the difference quotient is mostly roundoff.
pub fn gradient_check(
    policy: &ToyPolicy,
    sample: Sample<'_>,
    kind: LossKind,
    coords: usize,
    h: f64,
    floor: f64,
    seed: u64,
) -> Result<GradCheck> {
    use rand::Rng;
    let g = policy.per_sample_grad(sample, kind)?;
    let base = policy.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = policy.clone();
    let mut out = GradCheck {
        coords,
        resolved: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
    };
    for _ in 0..coords {
        let i = rng.random_range(0..base.len());
        let mut x = base.clone();
        x[i] = base[i] + h;
        probe.set_params(&x)?;
        let up = probe.loss(sample, kind)?.value;
        x[i] = base[i] - h;
        probe.set_params(&x)?;
        let down = probe.loss(sample, kind)?.value;
        let fd = (up - down) / (2.0 * h);
        let abs = (fd - g[i]).abs();
        let scale = fd.abs().max(g[i].abs());
        out.max_abs_error = out.max_abs_error.max(abs);
        if scale >= floor && scale > 0.0 {
            out.resolved += 1;
            out.max_rel_error = out.max_rel_error.max(abs / scale);
        }
    }
    Ok(out)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax_at(z: &[f64], i: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    z[i] - lse
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
