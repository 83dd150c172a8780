//! End-to-end curation run: embed, compress, SFT, generate, pair,
//! featurize, select.
//!
//! Every stage writes its artifacts under `workdir/<stage>/` together with
//! a `stage.json` record holding a digest of the stage inputs and a sha256
//! per output file. A stage whose record still matches is skipped and its
//! artifacts are reused; downstream stages always read from disk, so a
//! skipped and a recomputed stage feed identical bytes forward.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::breadth::{compress_breadth, BreadthConfig, BreadthReport, FULL_CLUSTERS};
use crate::clustering::{Algorithm, QuotaRule};
use crate::corpus::{knowledge_source, split_seed, Corpus, KnowledgeSource, Prompt, Response, DEFAULT_SEED_FRACTION};
use crate::depth::{
    allocate_depth, build_pairs, enforce_min_depth, gradient_depth_select, length_variance_weights, select_by_allocation,
    semantic_similarity_weights, uniform_weights, AllocationPlan, DepthMethod, GradientSelectConfig, KeepScope,
    PairPool, FULL_GRADIENT_CLUSTERS,
};
use crate::embedder::{load_embeddings, splitmix64, read_embeddings, save_embeddings, HashingEmbedder, TextEmbedder};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_selection, SelectionMetrics};
use crate::gradfeat::{compute_features, features_to_matrix, matrix_to_features, ProjectionMatrix, FULL_PROJECTION_DIM};
use crate::toy_policy::{
    sample_responses, sft_train, AdamHyper, Checkpoint, GenerationConfig, LossKind, SftConfig, ToyPolicy, FULL_LR,
};

pub const STAGES: [&str; 7] = ["embed", "breadth", "sft", "generate", "pairs", "features", "depth"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PathsConfig {
    pub input: PathBuf,
    pub workdir: PathBuf,
    /// Extra copy of the curated `d_dyn.jsonl`.
    pub output: Option<PathBuf>,
    /// Precomputed prompt embeddings (`.emb` or JSONL). Hash embeddings of
    /// the prompt texts are used when absent.
    pub embeddings: Option<PathBuf>,
    /// JSON map of prompt id to planted label; enables selection metrics.
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub dim: usize,
    pub normalize: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig { dim: 256, normalize: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BreadthSection {
    /// Prompt clusters `C`.
    pub clusters: usize,
    pub eta: f64,
    pub algorithm: Algorithm,
    pub quota: QuotaRule,
}

impl Default for BreadthSection {
    fn default() -> Self {
        BreadthSection {
            clusters: FULL_CLUSTERS,
            eta: 0.1,
            algorithm: Algorithm::KMeans,
            quota: QuotaRule::Ceil,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftSection {
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub rank: usize,
    pub seed_fraction: f64,
}

impl Default for SftSection {
    fn default() -> Self {
        SftSection {
            epochs: 4,
            batch_size: Some(32),
            lr: FULL_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rank: 8,
            seed_fraction: DEFAULT_SEED_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSource {
    /// Corpus responses for prompts with at least two scored ones, policy
    /// samples otherwise.
    #[default]
    Auto,
    Corpus,
    Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSection {
    pub source: ResponseSource,
    pub k: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_k: usize,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let g = GenerationConfig::default();
        GenerationSection {
            source: ResponseSource::Auto,
            k: g.k,
            max_tokens: g.max_tokens,
            temperature: g.temperature,
            top_k: g.top_k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairsSection {
    pub keep_fraction: f64,
    pub keep_scope: KeepScope,
}

impl Default for PairsSection {
    fn default() -> Self {
        PairsSection {
            keep_fraction: 0.1,
            keep_scope: KeepScope::Global,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturesSection {
    pub d: usize,
    pub proj_seed: u64,
    pub grad_loss: LossKind,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            d: FULL_PROJECTION_DIM,
            proj_seed: 0,
            grad_loss: LossKind::PairMargin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthSection {
    pub method: DepthMethod,
    /// Gradient clusters `G`.
    pub clusters: usize,
    pub algorithm: Algorithm,
    /// Gradient-method selection fraction. When unset it is derived as
    /// `budget / |pool|`, so the selection lands in `[N, N + G]`.
    pub eta: Option<f64>,
    /// Pair budget `N`; defaults to the input corpus's pair count.
    pub budget: Option<usize>,
    pub min_depth: usize,
}

impl Default for DepthSection {
    fn default() -> Self {
        DepthSection {
            method: DepthMethod::Gradient,
            clusters: FULL_GRADIENT_CLUSTERS,
            algorithm: Algorithm::KMeans,
            eta: Some(0.1),
            budget: None,
            min_depth: 1,
        }
    }
}

/// Whole-run configuration, read from TOML. `Default` carries the
/// full-scale hyperparameters; [`PipelineConfig::desk`] the small-scale
/// preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub embed: EmbedConfig,
    pub breadth: BreadthSection,
    pub sft: SftSection,
    pub generation: GenerationSection,
    pub pairs: PairsSection,
    pub features: FeaturesSection,
    pub depth: DepthSection,
}

impl PipelineConfig {
    /// Settings sized for a ~1,000-prompt corpus on one core.
    pub fn desk() -> Self {
        PipelineConfig {
            embed: EmbedConfig { dim: 64, normalize: true },
            breadth: BreadthSection {
                clusters: 10,
                ..Default::default()
            },
            sft: SftSection {
                epochs: 100,
                batch_size: None,
                lr: 1e-2,
                rank: 4,
                ..Default::default()
            },
            generation: GenerationSection {
                max_tokens: 32,
                ..Default::default()
            },
            pairs: PairsSection {
                keep_fraction: 0.25,
                ..Default::default()
            },
            features: FeaturesSection {
                d: 1024,
                ..Default::default()
            },
            depth: DepthSection {
                clusters: 5,
                eta: None,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    /// Loads a TOML config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut cfg = Self::from_toml_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.paths.input);
        fix(&mut cfg.paths.workdir);
        for p in [&mut cfg.paths.output, &mut cfg.paths.embeddings, &mut cfg.paths.labels]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let fraction = |x: f64| x > 0.0 && x <= 1.0;
        if !fraction(self.breadth.eta) {
            return bad(format!("breadth.eta must lie in (0, 1], got {}", self.breadth.eta));
        }
        if !fraction(self.pairs.keep_fraction) {
            return bad(format!("pairs.keep_fraction must lie in (0, 1], got {}", self.pairs.keep_fraction));
        }
        if !(self.sft.seed_fraction > 0.0 && self.sft.seed_fraction < 1.0) {
            return bad(format!("sft.seed_fraction must lie in (0, 1), got {}", self.sft.seed_fraction));
        }
        if let Some(eta) = self.depth.eta {
            if !fraction(eta) {
                return bad(format!("depth.eta must lie in (0, 1], got {eta}"));
            }
        }
        if self.breadth.clusters == 0 || self.depth.clusters == 0 {
            return bad("cluster counts must be positive".into());
        }
        if self.depth.budget == Some(0) {
            return bad("depth.budget must be positive".into());
        }
        if self.sft.rank == 0 || self.features.d == 0 || self.embed.dim < 2 {
            return bad("sft.rank and features.d must be positive, embed.dim at least 2".into());
        }
        if self.generation.k < 1 {
            return bad("generation.k must be at least 1".into());
        }
        if self.paths.workdir.as_os_str().is_empty() {
            return bad("paths.workdir is required".into());
        }
        for p in [Some(&self.paths.input), self.paths.embeddings.as_ref(), self.paths.labels.as_ref()]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        Ok(())
    }

    fn sft_config(&self) -> SftConfig {
        SftConfig {
            epochs: self.sft.epochs,
            batch_size: self.sft.batch_size,
            adam: AdamHyper {
                beta1: self.sft.beta1,
                beta2: self.sft.beta2,
                eps: self.sft.eps,
                lr: self.sft.lr,
            },
        }
    }

    fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            k: self.generation.k,
            max_tokens: self.generation.max_tokens,
            temperature: self.generation.temperature,
            top_k: self.generation.top_k,
            greedy: false,
        }
    }
}

/// Scores policy-generated responses in place of a judge model.
pub trait ScoreHook: Sync {
    fn score(&self, prompt: &Prompt, response: &Response) -> f64;
}

/// Placeholder judge: distinct prompt tokens echoed by the response,
/// discounted by response length.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

impl ScoreHook for OverlapScorer {
    fn score(&self, prompt: &Prompt, response: &Response) -> f64 {
        let prompt_tokens: std::collections::BTreeSet<&str> = prompt.text.split_whitespace().collect();
        let resp: std::collections::BTreeSet<&str> = response.text.split_whitespace().collect();
        let shared = resp.intersection(&prompt_tokens).count() as f64;
        shared / (1.0 + response.token_length as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub name: String,
    /// sha256 over the stage's output files, in name order.
    pub checksum: String,
    pub skipped: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub stages: Vec<StageSummary>,
    pub before: KnowledgeSource,
    pub after: KnowledgeSource,
    pub breadth: BreadthReport,
    pub allocation: AllocationPlan,
    pub pool_size: usize,
    pub selected_pairs: usize,
    /// Gradient-method selection fraction actually applied.
    pub depth_eta: Option<f64>,
    pub d_dyn_sha256: String,
    pub metrics: Option<SelectionMetrics>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.stages.iter().map(|s| (s.name.clone(), s.checksum.clone())).collect()
    }

    /// Depth value -> prompts at that depth in the curated set.
    pub fn depth_histogram(&self) -> BTreeMap<usize, usize> {
        self.allocation.histogram()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    input_digest: String,
    outputs: BTreeMap<String, String>,
}

impl StageRecord {
    fn checksum(&self) -> String {
        let joined: String = self.outputs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        sha256_hex(joined.as_bytes())
    }
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    summaries: Vec<StageSummary>,
    records: BTreeMap<&'static str, StageRecord>,
}

impl Runner<'_> {
    fn dir(&self, stage: &str) -> PathBuf {
        self.cfg.paths.workdir.join(stage)
    }

    /// Runs `body` unless the stage's record matches `inputs` and every
    /// listed output still hashes to its recorded value.
    fn stage(
        &mut self,
        name: &'static str,
        inputs: serde_json::Value,
        upstream: &[&str],
        body: impl FnOnce(&Path) -> Result<Vec<&'static str>>,
    ) -> Result<()> {
        let started = Instant::now();
        let dir = self.dir(name);
        let mut material = serde_json::to_string(&inputs)?;
        for up in upstream {
            material.push_str(&self.records[up].checksum());
        }
        let input_digest = sha256_hex(material.as_bytes());
        let record_path = dir.join("stage.json");

        let previous: Option<StageRecord> = fs::read_to_string(&record_path)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok());
        let fresh = previous.as_ref().is_some_and(|r| {
            r.input_digest == input_digest
                && r.outputs
                    .iter()
                    .all(|(f, h)| file_sha256(&dir.join(f)).is_ok_and(|got| &got == h))
        });

        let record = match previous {
            Some(r) if fresh => r,
            _ => {
                fs::create_dir_all(&dir)?;
                let files = body(&dir).map_err(|e| e.in_stage(name))?;
                let outputs = files
                    .iter()
                    .map(|f| Ok((f.to_string(), file_sha256(&dir.join(f))?)))
                    .collect::<Result<_>>()?;
                let r = StageRecord { input_digest, outputs };
                fs::write(&record_path, serde_json::to_string_pretty(&r)?)?;
                r
            }
        };
        self.summaries.push(StageSummary {
            name: name.to_string(),
            checksum: record.checksum(),
            skipped: fresh,
            seconds: started.elapsed().as_secs_f64(),
        });
        self.records.insert(name, record);
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn ids_of(prompts: &[Prompt]) -> Vec<String> {
    prompts.iter().map(|p| p.id.clone()).collect()
}

/// Runs every stage with the overlap scorer for generated responses.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    run_pipeline_with(cfg, &OverlapScorer)
}

pub fn run_pipeline_with(cfg: &PipelineConfig, scorer: &dyn ScoreHook) -> Result<RunManifest> {
    cfg.validate()?;
    let corpus = load_corpus_checked(&cfg.paths.input)?;
    let before = knowledge_source(&corpus)?;
    let input_sha = file_sha256(&cfg.paths.input)?;
    let seed = cfg.seed;
    let mut run = Runner {
        cfg,
        summaries: Vec::new(),
        records: BTreeMap::new(),
    };
    let wd = cfg.paths.workdir.clone();

    let emb_sha = cfg.paths.embeddings.as_deref().map(file_sha256).transpose()?;
    run.stage(
        "embed",
        serde_json::json!({"input": input_sha, "embeddings": emb_sha, "embed": cfg.embed, "seed": seed}),
        &[],
        |dir| {
            let ids = ids_of(&corpus.prompts);
            let m = match &cfg.paths.embeddings {
                Some(p) => load_embeddings(p, &ids, cfg.embed.normalize)?,
                None => {
                    let texts: Vec<&str> = corpus.prompts.iter().map(|p| p.text.as_str()).collect();
                    let e = HashingEmbedder {
                        dim: cfg.embed.dim,
                        seed,
                        normalize: cfg.embed.normalize,
                    };
                    e.embed(&ids, &texts)?
                }
            };
            save_embeddings(dir.join("prompts.emb"), &m)?;
            Ok(vec!["prompts.emb"])
        },
    )?;

    run.stage("breadth", serde_json::json!({"breadth": cfg.breadth, "seed": seed}), &["embed"], |dir| {
        let emb = read_embeddings(wd.join("embed/prompts.emb"))?;
        let bc = BreadthConfig {
            k: Some(cfg.breadth.clusters.min(corpus.prompts.len())),
            eta: cfg.breadth.eta,
            algorithm: cfg.breadth.algorithm,
            seed,
            quota: cfg.breadth.quota,
        };
        let res = compress_breadth(&corpus, &emb, &bc)?;
        let keep: std::collections::HashSet<&str> = res.x_rep.iter().map(String::as_str).collect();
        let x_rep = Corpus {
            prompts: corpus.prompts.iter().filter(|p| keep.contains(p.id.as_str())).cloned().collect(),
            ..Corpus::default()
        };
        x_rep.save(dir.join("x_rep.jsonl"))?;
        write_json(&dir.join("breadth_report.json"), &res.report)?;
        write_json(&dir.join("model.json"), &res.model)?;
        Ok(vec!["breadth_report.json", "model.json", "x_rep.jsonl"])
    })?;

    run.stage("sft", serde_json::json!({"input": input_sha, "sft": cfg.sft, "seed": seed}), &[], |dir| {
        let (seed_set, _) = split_seed(&corpus, cfg.sft.seed_fraction, seed)?;
        let texts = corpus
            .prompts
            .iter()
            .map(|p| p.text.as_str())
            .chain(corpus.responses.iter().map(|r| r.text.as_str()));
        let policy = ToyPolicy::for_texts(texts, cfg.sft.rank, seed)?;
        let out = sft_train(policy, &seed_set, &cfg.sft_config(), seed)?;
        write_json(&dir.join("checkpoint.json"), &out.checkpoint)?;
        write_json(&dir.join("loss_trace.json"), &out.loss_trace)?;
        Ok(vec!["checkpoint.json", "loss_trace.json"])
    })?;

    run.stage(
        "generate",
        serde_json::json!({"input": input_sha, "generation": cfg.generation, "seed": seed}),
        &["breadth", "sft"],
        |dir| {
            let x_rep = Corpus::load(wd.join("breadth/x_rep.jsonl"))?;
            let checkpoint: Checkpoint = read_json(&wd.join("sft/checkpoint.json"))?;
            let existing = corpus.responses_by_prompt();
            let gen = cfg.generation_config();
            let per_prompt: Vec<Vec<Response>> = x_rep
                .prompts
                .par_iter()
                .enumerate()
                .map(|(i, p)| {
                    let have = existing.get(&p.id).map(Vec::as_slice).unwrap_or(&[]);
                    let scored = have.len() >= 2 && have.iter().all(|r| r.score.is_some());
                    let use_corpus = match cfg.generation.source {
                        ResponseSource::Corpus => true,
                        ResponseSource::Policy => false,
                        ResponseSource::Auto => scored,
                    };
                    if use_corpus {
                        return Ok(have.to_vec());
                    }
                    let mut rs = sample_responses(&checkpoint.policy, p, &gen, splitmix64(seed.wrapping_add(i as u64)))?;
                    for r in &mut rs {
                        r.score = Some(scorer.score(p, r));
                    }
                    Ok(rs)
                })
                .collect::<Result<_>>()?;
            let candidates = Corpus::new(x_rep.prompts, per_prompt.into_iter().flatten().collect(), Vec::new())?;
            candidates.save(dir.join("candidates.jsonl"))?;
            Ok(vec!["candidates.jsonl"])
        },
    )?;

    run.stage("pairs", serde_json::json!({"pairs": cfg.pairs}), &["generate"], |dir| {
        let cand = Corpus::load(wd.join("generate/candidates.jsonl"))?;
        let pool = build_pairs(&cand.responses_by_prompt(), cfg.pairs.keep_fraction, cfg.pairs.keep_scope)?;
        let pooled = Corpus::new(cand.prompts, cand.responses, pool.pairs().cloned().collect())?;
        pooled.save(dir.join("pool.jsonl"))?;
        Ok(vec!["pool.jsonl"])
    })?;

    let gradient = cfg.depth.method == DepthMethod::Gradient;
    run.stage(
        "features",
        serde_json::json!({"features": cfg.features, "active": gradient}),
        &["sft", "pairs"],
        |dir| {
            if !gradient {
                fs::write(dir.join("features.skip"), format!("method {}\n", cfg.depth.method))?;
                return Ok(vec!["features.skip"]);
            }
            let pooled = Corpus::load(wd.join("pairs/pool.jsonl"))?;
            let checkpoint: Checkpoint = read_json(&wd.join("sft/checkpoint.json"))?;
            let pool = PairPool::from_pairs(pooled.pairs.clone());
            let pairs: Vec<_> = pool.pairs().cloned().collect();
            let proj = ProjectionMatrix::new(checkpoint.policy.param_dim(), cfg.features.d, cfg.features.proj_seed);
            let feats = compute_features(&pairs, &pooled, &checkpoint, &proj, cfg.features.grad_loss)?;
            save_embeddings(dir.join("features.emb"), &features_to_matrix(&feats)?)?;
            Ok(vec!["features.emb"])
        },
    )?;

    let budget = cfg.depth.budget.unwrap_or(corpus.pairs.len().max(1));
    run.stage(
        "depth",
        serde_json::json!({"depth": cfg.depth, "budget": budget, "embed": cfg.embed, "seed": seed}),
        &["pairs", "features"],
        |dir| {
            let pooled = Corpus::load(wd.join("pairs/pool.jsonl"))?;
            let pool = PairPool::from_pairs(pooled.pairs.clone());
            let available = pool.counts();
            let (pairs, plan, eta) = if gradient {
                if pool.is_empty() {
                    return Err(Error::InvalidConfig("pair pool is empty; nothing to select".into()));
                }
                let feats = matrix_to_features(&read_embeddings(wd.join("features/features.emb"))?);
                let eta = cfg.depth.eta.unwrap_or((budget as f64 / pool.len() as f64).min(1.0));
                let sel = gradient_depth_select(
                    &pool,
                    &feats,
                    &GradientSelectConfig {
                        g: cfg.depth.clusters.min(pool.len()),
                        eta,
                        algorithm: cfg.depth.algorithm,
                        seed,
                        quota: QuotaRule::Ceil,
                    },
                )?;
                let picked = enforce_min_depth(&pool, &sel.pairs, cfg.depth.min_depth);
                let mut realized = BTreeMap::new();
                for p in &picked {
                    *realized.entry(p.prompt_id.clone()).or_insert(0usize) += 1;
                }
                let total = picked.len().max(1) as f64;
                let depths: BTreeMap<String, usize> = pooled
                    .prompts
                    .iter()
                    .map(|p| (p.id.clone(), realized.get(&p.id).copied().unwrap_or(0)))
                    .collect();
                let plan = AllocationPlan {
                    method: DepthMethod::Gradient,
                    weights: depths.iter().map(|(k, &d)| (k.clone(), d as f64 / total)).collect(),
                    depths,
                    budget,
                    min_depth: cfg.depth.min_depth,
                };
                (picked, plan, Some(eta))
            } else {
                let by_prompt = pooled.responses_by_prompt();
                let weights = match cfg.depth.method {
                    DepthMethod::Length => length_variance_weights(&by_prompt)?,
                    DepthMethod::Semantic => {
                        let e = HashingEmbedder::new(cfg.embed.dim, seed);
                        semantic_similarity_weights(&by_prompt, &e)?
                    }
                    _ => uniform_weights(pooled.prompts.iter().map(|p| &p.id)),
                };
                let plan = allocate_depth(cfg.depth.method, &weights, budget, cfg.depth.min_depth, Some(&available))?;
                (select_by_allocation(&pool, &plan), plan, None)
            };
            let curated = Corpus::with_pairs(&pooled.prompts, &pooled.responses, pairs)?;
            curated.save(dir.join("d_dyn.jsonl"))?;
            write_json(&dir.join("allocation.json"), &plan)?;
            write_json(&dir.join("depth_eta.json"), &eta)?;
            Ok(vec!["allocation.json", "d_dyn.jsonl", "depth_eta.json"])
        },
    )?;
    let depth_eta: Option<f64> = read_json(&wd.join("depth/depth_eta.json"))?;

    let d_dyn_path = wd.join("depth/d_dyn.jsonl");
    let curated = Corpus::load(&d_dyn_path)?;
    if let Some(out) = &cfg.paths.output {
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::copy(&d_dyn_path, out)?;
    }
    let allocation: AllocationPlan = read_json(&wd.join("depth/allocation.json"))?;
    let breadth: BreadthReport = read_json(&wd.join("breadth/breadth_report.json"))?;
    let pool_size = Corpus::load(wd.join("pairs/pool.jsonl"))?.pairs.len();

    let metrics = match &cfg.paths.labels {
        Some(labels_path) => {
            let labels: BTreeMap<String, usize> = read_json(labels_path)?;
            let emb = read_embeddings(wd.join("embed/prompts.emb"))?;
            let selected: Vec<String> = curated
                .pairs
                .iter()
                .map(|p| p.prompt_id.clone())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            Some(evaluate_selection(&selected, &labels, &emb, Some(&allocation.depths), Some(seed))?)
        }
        None => None,
    };

    let manifest = RunManifest {
        config: cfg.clone(),
        stages: run.summaries,
        before,
        after: knowledge_source(&curated)?,
        breadth,
        allocation,
        pool_size,
        selected_pairs: curated.pairs.len(),
        depth_eta,
        d_dyn_sha256: file_sha256(&d_dyn_path)?,
        metrics,
    };
    write_json(&wd.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn load_corpus_checked(path: &Path) -> Result<Corpus> {
    crate::corpus::load_corpus(path).map_err(|e| e.in_stage("load"))
}

fn change(label: &str, from: f64, to: f64) -> String {
    if (from - to).abs() < 1e-12 {
        format!("{label} unchanged")
    } else {
        format!("{label} {from} -> {to}")
    }
}

/// Human-readable run summary.
pub fn report(m: &RunManifest) -> String {
    let mut s = String::new();
    let (b0, k0) = (m.before.breadth as f64, m.before.depth);
    let (b1, k1) = (m.after.breadth as f64, m.after.depth);
    let _ = writeln!(s, "{}, {}", change("breadth", b0, b1), change("depth", k0, k1));
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<8} {:>10} {:>10}", "", "B", "K");
    let _ = writeln!(s, "{:<8} {:>10} {:>10.3}", "before", m.before.breadth, m.before.depth);
    let _ = writeln!(s, "{:<8} {:>10} {:>10.3}", "after", m.after.breadth, m.after.depth);
    let _ = writeln!(
        s,
        "\npool {} pairs, selected {} ({}), budget {}",
        m.pool_size, m.selected_pairs, m.allocation.method, m.allocation.budget
    );
    if let Some(eta) = m.depth_eta {
        let _ = writeln!(s, "gradient selection fraction {eta:.4}");
    }
    let _ = writeln!(s, "\nbreadth clusters ({}, k = {}, eta = {}):", m.breadth.algorithm, m.breadth.k, m.breadth.eta);
    let _ = writeln!(s, "{:>8} {:>8} {:>8}", "cluster", "size", "selected");
    for c in &m.breadth.cluster_histogram {
        let _ = writeln!(s, "{:>8} {:>8} {:>8}", c.cluster, c.size, c.selected);
    }
    let _ = writeln!(s, "\ndepth histogram:");
    let _ = writeln!(s, "{:>8} {:>8}", "depth", "prompts");
    for (d, n) in m.depth_histogram() {
        let _ = writeln!(s, "{d:>8} {n:>8}");
    }
    if let Some(x) = &m.metrics {
        let _ = writeln!(s, "\nselection metrics ({} prompts):", x.selected);
        let _ = writeln!(s, "  blob coverage {:.4}", x.blob_coverage);
        let _ = writeln!(s, "  redundancy    {:.4}", x.redundancy);
        let _ = writeln!(s, "  size ratio    {:.4}", x.size_ratio);
        if let (Some(c), Some(r)) = (x.random_coverage, x.random_redundancy) {
            let _ = writeln!(s, "  random baseline: coverage {c:.4}, redundancy {r:.4}");
        }
    }
    let _ = writeln!(s, "\nstages:");
    for st in &m.stages {
        let _ = writeln!(
            s,
            "  {:<9} {} {:>8.2}s{}",
            st.name,
            &st.checksum[..12],
            st.seconds,
            if st.skipped { " (cached)" } else { "" }
        );
    }
    s
}
