use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bpo_core::breadth::{compress_breadth, BreadthConfig};
use bpo_core::clustering::{self, Algorithm, ClusterConfig, QuotaRule};
use bpo_core::corpus::{knowledge_source, load_corpus, scaled_target, split_seed, Corpus};
use bpo_core::depth::{
    allocate_depth, build_pairs, enforce_min_depth, gradient_depth_select, length_variance_weights,
    select_by_allocation, semantic_similarity_weights, uniform_weights, AllocationPlan, DepthMethod,
    GradientSelectConfig, KeepScope, PairPool,
};
use bpo_core::embedder::{read_embeddings, save_embeddings, HashingEmbedder, TextEmbedder};
use bpo_core::evalkit::{evaluate_selection, synth_generate, SyntheticSpec};
use bpo_core::gradfeat::{
    compute_features, features_to_matrix, jl_distortion_check, matrix_to_features, ProjectionMatrix,
    DESK_PROJECTION_DIM,
};
use bpo_core::pipeline::{report, run_pipeline, OverlapScorer, PipelineConfig, RunManifest, ScoreHook};
use bpo_core::toy_policy::{
    gradient_check, sample_responses, sft_train, AdamHyper, Checkpoint, GenerationConfig, LossKind, Sample,
    SftConfig, ToyPolicy,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "bpo", version, about = "Balanced preference-data curation")]
struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Print breadth and mean depth of a corpus, optionally a scaled target.
    Stats {
        #[arg(long)]
        input: PathBuf,
        /// Scaling ratio s in (0, 1].
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Split off a seed set of prompts with their chosen responses.
    Split {
        #[arg(long)]
        input: PathBuf,
        /// Output directory; receives seed.jsonl and rest.jsonl.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        seed_fraction: f64,
    },
    /// Hash-embed prompt texts (.emb or .jsonl output by extension).
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(long)]
        no_normalize: bool,
    },
    /// Cluster an embedding file and select the members nearest each centroid.
    Cluster {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "kmeans")]
        algo: AlgoArg,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        /// Model JSON (centroids, assignments, inertia).
        #[arg(long)]
        output: PathBuf,
        /// Also write the selection as JSON.
        #[arg(long)]
        selection: Option<PathBuf>,
        /// Let clusters with eta*size < 1 contribute nothing.
        #[arg(long)]
        allow_empty_quota: bool,
    },
    /// Breadth compression: write x_rep.jsonl and breadth_report.json.
    Compress {
        #[arg(long)]
        input: PathBuf,
        /// Prompt embeddings; hash embeddings of the prompt texts otherwise.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, value_enum, default_value = "kmeans")]
        algo: AlgoArg,
        #[arg(long)]
        allow_empty_quota: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Supervised warmup of the toy policy on the corpus's seed split.
    Sft {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 4)]
        rank: usize,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        seed_fraction: f64,
        /// Train on every response instead of a seed split.
        #[arg(long)]
        all: bool,
    },
    /// Sample responses for every prompt of a corpus.
    Gen {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long, default_value_t = 512)]
        max_tokens: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 50)]
        top_k: usize,
        #[arg(long)]
        greedy: bool,
        /// Score samples with the built-in overlap scorer.
        #[arg(long)]
        score: bool,
    },
    /// Finite-difference check of the policy's per-sample gradients.
    Gradcheck {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus whose pairs supply the samples.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
        /// Gradient magnitude below which relative error is not scored.
        #[arg(long, default_value_t = 1e-6)]
        floor: f64,
        #[arg(long, value_enum, default_value = "pair-margin")]
        grad_loss: LossArg,
    },
    /// Projected Adam-preconditioned gradient features of every pair.
    Gradfeat {
        #[arg(long, required_unless_present_any = ["dump_proj", "jl"])]
        checkpoint: Option<PathBuf>,
        /// Corpus with the pairs to featurize.
        #[arg(long, required_unless_present_any = ["dump_proj", "jl"])]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = DESK_PROJECTION_DIM)]
        d: usize,
        #[arg(long, value_enum, default_value = "pair-margin")]
        grad_loss: LossArg,
        /// Print the sign matrix for a source dimension P and exit.
        #[arg(long, value_name = "P")]
        dump_proj: Option<usize>,
        /// Run the distortion check for a source dimension P and exit.
        #[arg(long, value_name = "P")]
        jl: Option<usize>,
        #[arg(long, default_value_t = 100)]
        jl_pairs: usize,
        #[arg(long, default_value_t = 0.1)]
        jl_eps: f64,
    },
    /// Build scored pairs and keep those with the largest score gaps.
    Pairs {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        keep_fraction: f64,
        #[arg(long, value_enum, default_value = "global")]
        keep_scope: ScopeArg,
    },
    /// Choose per-prompt depth and write d_dyn.jsonl and allocation.json.
    Allocate {
        /// Pair pool corpus (output of `pairs`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "gradient")]
        method: MethodArg,
        /// Pair budget N; defaults to the pool size.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 1)]
        min_depth: usize,
        /// Gradient features aligned with the pool (gradient method).
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        g: usize,
        /// Gradient selection fraction; derived from the budget when unset.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, value_enum, default_value = "kmeans")]
        algo: AlgoArg,
        #[arg(long, default_value_t = 256)]
        dim: usize,
    },
    /// Generate a planted-blob corpus from a JSON spec.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Writes corpus.jsonl, embeddings.emb and labels.json.
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a selection against planted labels.
    Eval {
        /// Curated corpus (prompts with pairs are selected) or JSON id list.
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        allocation: Option<PathBuf>,
        /// Skip the random baseline.
        #[arg(long)]
        no_baseline: bool,
    },
    /// Print a pipeline config preset as TOML.
    Config {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
    /// Run the whole pipeline from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize a finished run (workdir or manifest path).
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Kmeans,
    Kmedoids,
    Spectral,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Kmeans => Algorithm::KMeans,
            AlgoArg::Kmedoids => Algorithm::KMedoids,
            AlgoArg::Spectral => Algorithm::Spectral,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Nll,
    PairMargin,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Nll => LossKind::Nll,
            LossArg::PairMargin => LossKind::PairMargin,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Global,
    Prompt,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gradient,
    Length,
    Semantic,
    Uniform,
}

impl From<MethodArg> for DepthMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gradient => DepthMethod::Gradient,
            MethodArg::Length => DepthMethod::Length,
            MethodArg::Semantic => DepthMethod::Semantic,
            MethodArg::Uniform => DepthMethod::Uniform,
        }
    }
}

fn quota(allow_empty: bool) -> QuotaRule {
    if allow_empty {
        QuotaRule::Floor
    } else {
        QuotaRule::Ceil
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn prompt_embeddings(corpus: &Corpus, path: Option<&Path>, dim: usize, seed: u64) -> Result<bpo_core::embedder::EmbeddingMatrix> {
    let ids: Vec<String> = corpus.prompts.iter().map(|p| p.id.clone()).collect();
    Ok(match path {
        Some(p) => bpo_core::embedder::load_embeddings(p, &ids, true)?,
        None => {
            let texts: Vec<&str> = corpus.prompts.iter().map(|p| p.text.as_str()).collect();
            HashingEmbedder::new(dim, seed).embed(&ids, &texts)?
        }
    })
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Stats { input, scale } => {
            let corpus = load_corpus(&input)?;
            let ks = knowledge_source(&corpus)?;
            let mut out = serde_json::json!({
                "breadth": ks.breadth,
                "depth": ks.depth,
                "prompts": corpus.prompts.len(),
                "responses": corpus.responses.len(),
                "pairs": corpus.pairs.len(),
            });
            if let Some(s) = scale {
                out["target"] = serde_json::to_value(scaled_target(ks, s)?)?;
            }
            print_json(&out)?;
        }
        Command::Split {
            input,
            output,
            seed_fraction,
        } => {
            let corpus = load_corpus(&input)?;
            let (seed_set, rest) = split_seed(&corpus, seed_fraction, seed)?;
            fs::create_dir_all(&output)?;
            seed_set.save(output.join("seed.jsonl"))?;
            rest.save(output.join("rest.jsonl"))?;
            println!("seed {} prompts, rest {} prompts", seed_set.prompts.len(), rest.prompts.len());
        }
        Command::Embed {
            input,
            output,
            dim,
            no_normalize,
        } => {
            let corpus = load_corpus(&input)?;
            let ids: Vec<String> = corpus.prompts.iter().map(|p| p.id.clone()).collect();
            let texts: Vec<&str> = corpus.prompts.iter().map(|p| p.text.as_str()).collect();
            let e = HashingEmbedder {
                dim,
                seed,
                normalize: !no_normalize,
            };
            save_embeddings(&output, &e.embed(&ids, &texts)?)?;
        }
        Command::Cluster {
            input,
            algo,
            k,
            eta,
            output,
            selection,
            allow_empty_quota,
        } => {
            let x = read_embeddings(&input)?;
            let model = clustering::fit(&x, &ClusterConfig::new(algo.into(), k, seed))?;
            write_json(&output, &model)?;
            let sel = clustering::rank_select(&x, &model, eta, quota(allow_empty_quota))?;
            if let Some(path) = selection {
                write_json(&path, &sel)?;
            }
            println!(
                "{} clusters, inertia {:.6}, selected {} of {}",
                model.k,
                model.inertia,
                sel.selected_ids.len(),
                x.len()
            );
        }
        Command::Compress {
            input,
            embeddings,
            dim,
            k,
            eta,
            algo,
            allow_empty_quota,
            output,
        } => {
            let corpus = load_corpus(&input)?;
            let emb = prompt_embeddings(&corpus, embeddings.as_deref(), dim, seed)?;
            let cfg = BreadthConfig {
                k,
                eta,
                algorithm: algo.into(),
                seed,
                quota: quota(allow_empty_quota),
            };
            let res = compress_breadth(&corpus, &emb, &cfg)?;
            fs::create_dir_all(&output)?;
            corpus.restrict_to(&res.x_rep).save(output.join("x_rep.jsonl"))?;
            write_json(&output.join("breadth_report.json"), &res.report)?;
            println!(
                "breadth {} -> {} ({} clusters)",
                res.report.original_breadth, res.report.compressed_breadth, res.report.k
            );
        }
        Command::Sft {
            input,
            output,
            epochs,
            lr,
            rank,
            batch_size,
            seed_fraction,
            all,
        } => {
            let corpus = load_corpus(&input)?;
            let train = if all { corpus.clone() } else { split_seed(&corpus, seed_fraction, seed)?.0 };
            let texts = corpus
                .prompts
                .iter()
                .map(|p| p.text.as_str())
                .chain(corpus.responses.iter().map(|r| r.text.as_str()));
            let policy = ToyPolicy::for_texts(texts, rank, seed)?;
            let cfg = SftConfig {
                epochs,
                batch_size,
                adam: AdamHyper {
                    lr,
                    ..AdamHyper::default()
                },
            };
            let out = sft_train(policy, &train, &cfg, seed)?;
            write_json(&output, &out.checkpoint)?;
            let first = out.loss_trace.first().copied().unwrap_or(f64::NAN);
            let last = out.loss_trace.last().copied().unwrap_or(f64::NAN);
            println!("per-token NLL {first:.4} -> {last:.4} over {} steps", out.loss_trace.len() - 1);
        }
        Command::Gen {
            checkpoint,
            input,
            output,
            k,
            max_tokens,
            temperature,
            top_k,
            greedy,
            score,
        } => {
            let ckpt: Checkpoint = read_json(&checkpoint)?;
            let corpus = load_corpus(&input)?;
            let cfg = GenerationConfig {
                k,
                max_tokens,
                temperature,
                top_k,
                greedy,
            };
            let mut responses = Vec::new();
            for (i, p) in corpus.prompts.iter().enumerate() {
                let mut rs = sample_responses(&ckpt.policy, p, &cfg, seed.wrapping_add(i as u64))?;
                if score {
                    for r in &mut rs {
                        r.score = Some(OverlapScorer.score(p, r));
                    }
                }
                responses.extend(rs);
            }
            Corpus::new(corpus.prompts, responses, Vec::new())?.save(&output)?;
        }
        Command::Gradcheck {
            checkpoint,
            input,
            samples,
            coords,
            h,
            floor,
            grad_loss,
        } => {
            let ckpt: Checkpoint = read_json(&checkpoint)?;
            let corpus = load_corpus(&input)?;
            let prompts = corpus.prompt_index();
            let responses = corpus.response_index();
            if corpus.pairs.is_empty() {
                bail!("corpus has no pairs to check");
            }
            let mut worst = 0.0f64;
            for (i, pair) in corpus.pairs.iter().take(samples).enumerate() {
                let s = Sample::Pair {
                    prompt: &prompts[pair.prompt_id.as_str()].text,
                    chosen: &responses[pair.chosen.as_str()].text,
                    rejected: &responses[pair.rejected.as_str()].text,
                };
                let r = gradient_check(&ckpt.policy, s, grad_loss.into(), coords, h, floor, seed.wrapping_add(i as u64))?;
                println!(
                    "{:<40} resolved {:>3}/{:<3} max rel {:.3e} max abs {:.3e}",
                    pair.key(),
                    r.resolved,
                    r.coords,
                    r.max_rel_error,
                    r.max_abs_error
                );
                worst = worst.max(r.max_rel_error);
            }
            println!("worst relative error {worst:.3e}");
            if worst > 1e-4 {
                bail!("gradient check failed: {worst:.3e} > 1e-4");
            }
        }
        Command::Gradfeat {
            checkpoint,
            input,
            output,
            d,
            grad_loss,
            dump_proj,
            jl,
            jl_pairs,
            jl_eps,
        } => {
            if let Some(p) = dump_proj {
                let proj = ProjectionMatrix::new(p, d, seed);
                for row in proj.dump() {
                    let cells: Vec<String> = row.iter().map(|s| format!("{s:+}")).collect();
                    println!("{}", cells.join(" "));
                }
                return Ok(());
            }
            if let Some(p) = jl {
                print_json(&jl_distortion_check(p, d, jl_pairs, jl_eps, seed)?)?;
                return Ok(());
            }
            let (Some(checkpoint), Some(input)) = (checkpoint, input) else {
                bail!("--checkpoint and --input are required");
            };
            let Some(output) = output else {
                bail!("--output is required");
            };
            let ckpt: Checkpoint = read_json(&checkpoint)?;
            let corpus = load_corpus(&input)?;
            let pool = PairPool::from_pairs(corpus.pairs.clone());
            let pairs: Vec<_> = pool.pairs().cloned().collect();
            let proj = ProjectionMatrix::new(ckpt.policy.param_dim(), d, seed);
            let feats = compute_features(&pairs, &corpus, &ckpt, &proj, grad_loss.into())?;
            save_embeddings(&output, &features_to_matrix(&feats)?)?;
            println!("{} features, {} -> {} dims", feats.len(), proj.source_dim, d);
        }
        Command::Pairs {
            input,
            output,
            keep_fraction,
            keep_scope,
        } => {
            let corpus = load_corpus(&input)?;
            let scope = match keep_scope {
                ScopeArg::Global => KeepScope::Global,
                ScopeArg::Prompt => KeepScope::Prompt,
            };
            let pool = build_pairs(&corpus.responses_by_prompt(), keep_fraction, scope)?;
            let n = pool.len();
            Corpus::new(corpus.prompts, corpus.responses, pool.pairs().cloned().collect())?.save(&output)?;
            println!("{n} pairs kept");
        }
        Command::Allocate {
            input,
            output,
            method,
            budget,
            min_depth,
            features,
            g,
            eta,
            algo,
            dim,
        } => {
            let corpus = load_corpus(&input)?;
            let pool = PairPool::from_pairs(corpus.pairs.clone());
            if pool.is_empty() {
                bail!("input has no pairs");
            }
            let budget = budget.unwrap_or(pool.len());
            let method: DepthMethod = method.into();
            let (pairs, plan) = if method == DepthMethod::Gradient {
                let Some(fpath) = features else {
                    bail!("--features is required for the gradient method");
                };
                let feats = matrix_to_features(&read_embeddings(&fpath)?);
                let eta = eta.unwrap_or((budget as f64 / pool.len() as f64).min(1.0));
                let sel = gradient_depth_select(
                    &pool,
                    &feats,
                    &GradientSelectConfig {
                        g: g.min(pool.len()),
                        eta,
                        algorithm: algo.into(),
                        seed,
                        quota: QuotaRule::Ceil,
                    },
                )?;
                let picked = enforce_min_depth(&pool, &sel.pairs, min_depth);
                let mut depths: BTreeMap<String, usize> = corpus.prompts.iter().map(|p| (p.id.clone(), 0)).collect();
                for p in &picked {
                    *depths.entry(p.prompt_id.clone()).or_insert(0) += 1;
                }
                let total = picked.len().max(1) as f64;
                let plan = AllocationPlan {
                    method,
                    weights: depths.iter().map(|(k, &d)| (k.clone(), d as f64 / total)).collect(),
                    depths,
                    budget,
                    min_depth,
                };
                (picked, plan)
            } else {
                let by_prompt = corpus.responses_by_prompt();
                let weights = match method {
                    DepthMethod::Length => length_variance_weights(&by_prompt)?,
                    DepthMethod::Semantic => semantic_similarity_weights(&by_prompt, &HashingEmbedder::new(dim, seed))?,
                    _ => uniform_weights(corpus.prompts.iter().map(|p| &p.id)),
                };
                let plan = allocate_depth(method, &weights, budget, min_depth, Some(&pool.counts()))?;
                (select_by_allocation(&pool, &plan), plan)
            };
            fs::create_dir_all(&output)?;
            let n = pairs.len();
            Corpus::with_pairs(&corpus.prompts, &corpus.responses, pairs)?.save(output.join("d_dyn.jsonl"))?;
            write_json(&output.join("allocation.json"), &plan)?;
            println!("{n} pairs selected over {} prompts ({method})", plan.depths.len());
        }
        Command::Synth { spec, output } => {
            // A spec file carries its own seed.
            let spec: SyntheticSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SyntheticSpec {
                    seed,
                    ..Default::default()
                },
            };
            let data = synth_generate(&spec)?;
            data.save(&output)?;
            println!(
                "{} prompts in {} blobs, {} responses, {} pairs",
                data.corpus.prompts.len(),
                spec.n_blobs,
                data.corpus.responses.len(),
                data.corpus.pairs.len()
            );
        }
        Command::Eval {
            selection,
            labels,
            embeddings,
            allocation,
            no_baseline,
        } => {
            let ids: Vec<String> = if selection.extension().is_some_and(|e| e == "jsonl") {
                let c = load_corpus(&selection)?;
                if c.pairs.is_empty() {
                    c.prompts.iter().map(|p| p.id.clone()).collect()
                } else {
                    let set: std::collections::BTreeSet<String> = c.pairs.iter().map(|p| p.prompt_id.clone()).collect();
                    set.into_iter().collect()
                }
            } else {
                read_json(&selection)?
            };
            let labels: BTreeMap<String, usize> = read_json(&labels)?;
            let emb = read_embeddings(&embeddings)?;
            let plan: Option<AllocationPlan> = allocation.as_deref().map(read_json).transpose()?;
            let m = evaluate_selection(
                &ids,
                &labels,
                &emb,
                plan.as_ref().map(|p| &p.depths),
                (!no_baseline).then_some(seed),
            )?;
            print_json(&m)?;
        }
        Command::Config { preset } => {
            let cfg = match preset {
                Preset::Full => PipelineConfig::default(),
                Preset::Desk => PipelineConfig::desk(),
            };
            print!("{}", cfg.to_toml_string());
        }
        Command::Run { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let manifest = run_pipeline(&cfg)?;
            print!("{}", report(&manifest));
        }
        Command::Report { run, json } => {
            let manifest = RunManifest::load(&run)?;
            if json {
                print_json(&manifest)?;
            } else {
                print!("{}", report(&manifest));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
