use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{softmax, AdamHyper, AdamState, ToyPolicy, BOS, EOS};
use crate::corpus::{Corpus, Prompt, Response};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub epochs: usize,
    /// `None` trains full-batch: one step per epoch.
    pub batch_size: Option<usize>,
    pub adam: AdamHyper,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            epochs: 200,
            batch_size: None,
            adam: AdamHyper::default(),
        }
    }
}

/// Policy weights with the optimizer state that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub policy: ToyPolicy,
    pub adam: AdamState,
}

#[derive(Debug, Clone)]
pub struct SftOutcome {
    pub checkpoint: Checkpoint,
    /// Mean per-token NLL over the whole seed set, before training and
    /// after every step.
    pub loss_trace: Vec<f64>,
}

/// Supervised warmup on the seed set's (prompt, response) records,
/// minimizing mean per-token negative log-likelihood with Adam.
pub fn sft_train(policy: ToyPolicy, seed_corpus: &Corpus, cfg: &SftConfig, seed: u64) -> Result<SftOutcome> {
    let prompts = seed_corpus.prompt_index();
    let mut samples = Vec::new();
    for r in &seed_corpus.responses {
        let prompt = prompts
            .get(r.prompt_id.as_str())
            .ok_or_else(|| Error::DanglingReference(r.prompt_id.clone()))?;
        let t = policy.transitions(&prompt.text, &r.text)?;
        if !t.is_empty() {
            samples.push(t);
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptySeed);
    }

    let mut policy = policy;
    let mut adam = AdamState::new(policy.param_dim(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batch = cfg.batch_size.unwrap_or(samples.len()).max(1);
    let mut trace = vec![mean_token_nll(&policy, &samples)];

    for _ in 0..cfg.epochs {
        if cfg.batch_size.is_some() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let tokens: usize = chunk.iter().map(|&i| samples[i].len()).sum();
            let grads: Vec<Vec<f64>> = chunk
                .par_iter()
                .map(|&i| {
                    let mut g = vec![0.0; policy.param_dim()];
                    policy.accumulate_nll_grad(&samples[i], 1.0 / tokens as f64, &mut g);
                    g
                })
                .collect();
            let mut grad = vec![0.0; policy.param_dim()];
            for g in &grads {
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let mut params = policy.params();
            adam.step(&mut params, &grad)?;
            policy.set_params(&params)?;
            trace.push(mean_token_nll(&policy, &samples));
        }
    }
    Ok(SftOutcome {
        checkpoint: Checkpoint { policy, adam },
        loss_trace: trace,
    })
}

fn mean_token_nll(policy: &ToyPolicy, samples: &[Vec<(usize, usize)>]) -> f64 {
    let tokens: usize = samples.iter().map(Vec::len).sum();
    let total: f64 = samples.par_iter().map(|t| -policy.log_prob_of(t)).collect::<Vec<_>>().iter().sum();
    total / tokens as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub k: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_k: usize,
    /// Always take the most likely token (the zero-temperature limit).
    #[serde(default)]
    pub greedy: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            k: 16,
            max_tokens: 512,
            temperature: 1.0,
            top_k: 50,
            greedy: false,
        }
    }
}

/// Samples `cfg.k` continuations of `prompt`. Generation stops at `<eos>`
/// or after `max_tokens`; `<bos>` is never emitted. Response ids are
/// `<prompt id>/g<n>` and scores are left empty.
pub fn sample_responses(policy: &ToyPolicy, prompt: &Prompt, cfg: &GenerationConfig, seed: u64) -> Result<Vec<Response>> {
    let start = match prompt.text.split_whitespace().last() {
        Some(t) => policy.token_id(t)?,
        None => policy.token_id(BOS)?,
    };
    let bos = policy.token_id(BOS).ok();
    let eos = policy.token_id(EOS).ok();
    let greedy = cfg.greedy || cfg.temperature <= 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut out = Vec::with_capacity(cfg.k);
    for n in 0..cfg.k {
        let mut prev = start;
        let mut words: Vec<&str> = Vec::new();
        for _ in 0..cfg.max_tokens {
            let mut logits = policy.logits(prev);
            if let Some(b) = bos {
                logits[b] = f64::NEG_INFINITY;
            }
            let next = if greedy {
                argmax(&logits)
            } else {
                sample_top_k(&logits, cfg.temperature, cfg.top_k, &mut rng)
            };
            if Some(next) == eos {
                break;
            }
            words.push(policy.token(next));
            prev = next;
        }
        out.push(Response::new(
            format!("{}/g{n}", prompt.id),
            prompt.id.clone(),
            words.join(" "),
            None,
        ));
    }
    Ok(out)
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

fn sample_top_k<R: Rng>(logits: &[f64], temperature: f64, top_k: usize, rng: &mut R) -> usize {
    let mut order: Vec<usize> = (0..logits.len()).filter(|&i| logits[i].is_finite()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    if top_k > 0 {
        order.truncate(top_k);
    }
    let scaled: Vec<f64> = order.iter().map(|&i| logits[i] / temperature).collect();
    let probs = softmax(&scaled);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (p, &i) in probs.iter().zip(&order) {
        acc += p;
        if u < acc {
            return i;
        }
    }
    *order.last().expect("at least one finite logit")
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::corpus::{Corpus, Prompt, Response};

    fn seed_corpus(lines: &[(&str, &str)]) -> Corpus {
        let prompts = lines
            .iter()
            .enumerate()
            .map(|(i, (p, _))| Prompt {
                id: format!("p{i}"),
                text: p.to_string(),
            })
            .collect();
        let responses = lines
            .iter()
            .enumerate()
            .map(|(i, (_, r))| Response::new(format!("p{i}/c"), format!("p{i}"), *r, Some(1.0)))
            .collect();
        Corpus::new(prompts, responses, vec![]).unwrap()
    }

    #[test]
    fn single_record_is_memorized() {
        let corpus = seed_corpus(&[("say", "hello world again")]);
        let policy = ToyPolicy::for_texts(["say hello world again"], 4, 0).unwrap();
        let cfg = SftConfig {
            epochs: 400,
            batch_size: None,
            adam: AdamHyper { lr: 0.05, ..Default::default() },
        };
        let out = sft_train(policy, &corpus, &cfg, 0).unwrap();
        let trace = &out.loss_trace;
        let initial = trace[0];
        assert!(*trace.last().unwrap() < 0.1 * initial);
        // Monotone once past the first handful of steps.
        for w in trace[20..].windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn zero_lr_keeps_params() {
        let corpus = seed_corpus(&[("a", "b c")]);
        let policy = ToyPolicy::for_texts(["a b c"], 2, 3).unwrap();
        let before = policy.params();
        let cfg = SftConfig {
            epochs: 5,
            batch_size: None,
            adam: AdamHyper { lr: 0.0, ..Default::default() },
        };
        let out = sft_train(policy, &corpus, &cfg, 0).unwrap();
        assert_eq!(out.checkpoint.policy.params(), before);
        assert_eq!(out.checkpoint.adam.t, 5);
    }

    #[test]
    fn empty_seed() {
        let corpus = Corpus::new(
            vec![Prompt {
                id: "p".into(),
                text: "x".into(),
            }],
            vec![],
            vec![],
        )
        .unwrap();
        let policy = ToyPolicy::for_texts(["x"], 1, 0).unwrap();
        assert!(matches!(sft_train(policy, &corpus, &SftConfig::default(), 0), Err(Error::EmptySeed)));
    }

    /// Empirical bigram MLE over the same transitions is the floor; a
    /// full-rank policy should get within 0.05 nats of it.
    #[test]
    fn full_rank_reaches_bigram_mle() {
        let lines = [
            ("q", "a b a c"),
            ("q", "a b b"),
            ("r", "c a b"),
            ("r", "b c c a"),
            ("q", "a a b c"),
        ];
        let corpus = seed_corpus(&lines);
        let texts: Vec<String> = lines.iter().map(|(p, r)| format!("{p} {r}")).collect();
        let policy = ToyPolicy::for_texts(texts.iter().map(String::as_str), 8, 2).unwrap();
        assert!(policy.rank() >= policy.vocab_size());

        let mut counts: HashMap<(usize, usize), f64> = HashMap::new();
        let mut totals: HashMap<usize, f64> = HashMap::new();
        let mut n_tok = 0.0;
        for (p, r) in &lines {
            for (a, b) in policy.transitions(p, r).unwrap() {
                *counts.entry((a, b)).or_default() += 1.0;
                *totals.entry(a).or_default() += 1.0;
                n_tok += 1.0;
            }
        }
        let mle: f64 = counts.iter().map(|(&(a, _), &c)| -c * (c / totals[&a]).ln()).sum::<f64>() / n_tok;

        let cfg = SftConfig {
            epochs: 3000,
            batch_size: None,
            adam: AdamHyper { lr: 0.02, ..Default::default() },
        };
        let out = sft_train(policy, &corpus, &cfg, 0).unwrap();
        let last = *out.loss_trace.last().unwrap();
        assert!(last <= mle + 0.05, "trained {last} vs MLE {mle}");
        assert!(last >= mle - 1e-9);
    }

    #[test]
    fn greedy_samples_agree() {
        let policy = ToyPolicy::for_texts(["go left right up down"], 2, 9).unwrap();
        let mut p = policy.clone();
        let params: Vec<f64> = (0..p.param_dim()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        p.set_params(&params).unwrap();
        let prompt = Prompt {
            id: "x".into(),
            text: "go".into(),
        };
        let cfg = GenerationConfig {
            k: 4,
            max_tokens: 6,
            greedy: true,
            ..Default::default()
        };
        let rs = sample_responses(&p, &prompt, &cfg, 1).unwrap();
        assert!(rs.windows(2).all(|w| w[0].text == w[1].text));
    }

    #[test]
    fn sampling_is_seeded() {
        let policy = ToyPolicy::for_texts(["go left right up down"], 2, 9).unwrap();
        let prompt = Prompt {
            id: "x".into(),
            text: "go".into(),
        };
        let cfg = GenerationConfig {
            k: 8,
            max_tokens: 10,
            ..Default::default()
        };
        let a = sample_responses(&policy, &prompt, &cfg, 5).unwrap();
        let b = sample_responses(&policy, &prompt, &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert!(a.iter().all(|r| !r.text.contains(BOS) && r.token_length <= 10));
        let defaults = GenerationConfig::default();
        assert_eq!((defaults.k, defaults.top_k, defaults.max_tokens), (16, 50, 512));
        assert_eq!(defaults.temperature, 1.0);
    }
}
