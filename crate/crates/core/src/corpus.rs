//! Preference-corpus data model and its JSONL encoding.
//!
//! A corpus file holds three record shapes, one JSON object per line:
//!
//! ```text
//! {"id":"p1","text":"how do I ..."}                                  prompt
//! {"id":"p1/r0","prompt_id":"p1","text":"...","score":7.0}           response
//! {"prompt_id":"p1","chosen":"p1/r0","rejected":"p1/r1","score_diff":2.0}  pair
//! ```
//!
//! The shape is inferred from the keys present. Response ids are optional on
//! input and default to `<prompt_id>/r<n>`. Emission writes prompts, then
//! responses, then pairs, with a fixed key order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Splits text into tokens. Token counts feed `Response::token_length`.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    pub prompt_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip)]
    pub token_length: usize,
}

impl Response {
    pub fn new(
        id: impl Into<String>,
        prompt_id: impl Into<String>,
        text: impl Into<String>,
        score: Option<f64>,
    ) -> Self {
        let text = text.into();
        let token_length = WhitespaceTokenizer.count(&text);
        Response {
            id: id.into(),
            prompt_id: prompt_id.into(),
            text,
            score,
            token_length,
        }
    }
}

/// An ordered preference: `chosen` scored strictly above `rejected`.
/// Both sides are response ids within the owning corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub chosen: String,
    pub rejected: String,
    pub score_diff: f64,
}

impl PreferencePair {
    pub fn from_responses(chosen: &Response, rejected: &Response) -> Result<Self> {
        let (Some(c), Some(r)) = (chosen.score, rejected.score) else {
            let unscored = if chosen.score.is_none() { &chosen.id } else { &rejected.id };
            return Err(Error::UnscoredResponse(unscored.clone()));
        };
        if chosen.prompt_id != rejected.prompt_id {
            return Err(Error::InvalidRecord(format!(
                "pair {} > {} spans two prompts",
                chosen.id, rejected.id
            )));
        }
        if chosen.id == rejected.id || c <= r {
            return Err(Error::InvalidRecord(format!(
                "pair {} > {} is not strictly ordered by score",
                chosen.id, rejected.id
            )));
        }
        Ok(PreferencePair {
            prompt_id: chosen.prompt_id.clone(),
            chosen: chosen.id.clone(),
            rejected: rejected.id.clone(),
            score_diff: c - r,
        })
    }

    /// Stable identifier used to align pairs with their gradient features.
    pub fn key(&self) -> String {
        format!("{}>{}", self.chosen, self.rejected)
    }
}

/// Breadth (distinct prompts) and depth (mean pairs per prompt).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSource {
    pub breadth: usize,
    pub depth: f64,
}

impl KnowledgeSource {
    pub fn total(&self) -> f64 {
        self.breadth as f64 * self.depth
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub prompts: Vec<Prompt>,
    pub responses: Vec<Response>,
    pub pairs: Vec<PreferencePair>,
    pub seed_fraction: f64,
}

pub const DEFAULT_SEED_FRACTION: f64 = 0.1;

impl Corpus {
    /// Builds a corpus and checks ids, texts, and cross references.
    pub fn new(
        prompts: Vec<Prompt>,
        responses: Vec<Response>,
        pairs: Vec<PreferencePair>,
    ) -> Result<Self> {
        let corpus = Corpus {
            prompts,
            responses,
            pairs,
            seed_fraction: DEFAULT_SEED_FRACTION,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut prompt_ids = HashSet::with_capacity(self.prompts.len());
        for p in &self.prompts {
            if p.id.is_empty() {
                return Err(Error::InvalidRecord("prompt with empty id".into()));
            }
            if p.text.is_empty() {
                return Err(Error::InvalidRecord(format!("prompt `{}` has empty text", p.id)));
            }
            if !prompt_ids.insert(p.id.as_str()) {
                return Err(Error::DuplicateId(p.id.clone()));
            }
        }
        let mut responses: HashMap<&str, &Response> = HashMap::with_capacity(self.responses.len());
        for r in &self.responses {
            if !prompt_ids.contains(r.prompt_id.as_str()) {
                return Err(Error::DanglingReference(r.prompt_id.clone()));
            }
            if let Some(s) = r.score {
                if !s.is_finite() {
                    return Err(Error::InvalidRecord(format!("response `{}` has non-finite score", r.id)));
                }
            }
            if responses.insert(r.id.as_str(), r).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        for pair in &self.pairs {
            if !prompt_ids.contains(pair.prompt_id.as_str()) {
                return Err(Error::DanglingReference(pair.prompt_id.clone()));
            }
            let chosen = responses
                .get(pair.chosen.as_str())
                .ok_or_else(|| Error::DanglingReference(pair.chosen.clone()))?;
            let rejected = responses
                .get(pair.rejected.as_str())
                .ok_or_else(|| Error::DanglingReference(pair.rejected.clone()))?;
            let rebuilt = PreferencePair::from_responses(chosen, rejected)?;
            if rebuilt.prompt_id != pair.prompt_id {
                return Err(Error::InvalidRecord(format!(
                    "pair {} lists prompt `{}` but its responses belong to `{}`",
                    pair.key(),
                    pair.prompt_id,
                    rebuilt.prompt_id
                )));
            }
        }
        Ok(())
    }

    pub fn prompt_index(&self) -> HashMap<&str, &Prompt> {
        self.prompts.iter().map(|p| (p.id.as_str(), p)).collect()
    }

    pub fn response_index(&self) -> HashMap<&str, &Response> {
        self.responses.iter().map(|r| (r.id.as_str(), r)).collect()
    }

    /// Responses grouped by prompt, in prompt-id order. Prompts without
    /// responses are omitted.
    pub fn responses_by_prompt(&self) -> BTreeMap<String, Vec<Response>> {
        let mut out: BTreeMap<String, Vec<Response>> = BTreeMap::new();
        for r in &self.responses {
            out.entry(r.prompt_id.clone()).or_default().push(r.clone());
        }
        out
    }

    /// Keeps only the listed prompts and everything that references them.
    pub fn restrict_to(&self, prompt_ids: &[String]) -> Corpus {
        let keep: HashSet<&str> = prompt_ids.iter().map(String::as_str).collect();
        Corpus {
            prompts: self.prompts.iter().filter(|p| keep.contains(p.id.as_str())).cloned().collect(),
            responses: self
                .responses
                .iter()
                .filter(|r| keep.contains(r.prompt_id.as_str()))
                .cloned()
                .collect(),
            pairs: self
                .pairs
                .iter()
                .filter(|p| keep.contains(p.prompt_id.as_str()))
                .cloned()
                .collect(),
            seed_fraction: self.seed_fraction,
        }
    }

    /// Builds the corpus for a curated pair set: the listed prompts, the
    /// responses the pairs reference, and the pairs themselves.
    pub fn with_pairs(
        prompts: &[Prompt],
        responses: &[Response],
        pairs: Vec<PreferencePair>,
    ) -> Result<Corpus> {
        let used: HashSet<&str> = pairs
            .iter()
            .flat_map(|p| [p.chosen.as_str(), p.rejected.as_str()])
            .collect();
        let responses = responses.iter().filter(|r| used.contains(r.id.as_str())).cloned().collect();
        Corpus::new(prompts.to_vec(), responses, pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_corpus(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.prompts {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        for r in &self.responses {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        for pair in &self.pairs {
            serde_json::to_writer(&mut w, pair)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<String>,
    prompt_id: Option<String>,
    text: Option<String>,
    score: Option<f64>,
    chosen: Option<String>,
    rejected: Option<String>,
}

/// Reads a corpus from JSONL. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_corpus(BufReader::new(File::open(path)?))
}

pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    parse_corpus_with(reader, &WhitespaceTokenizer)
}

pub fn parse_corpus_with<R: BufRead>(reader: R, tokenizer: &dyn Tokenizer) -> Result<Corpus> {
    let mut prompts = Vec::new();
    let mut responses = Vec::new();
    let mut raw_pairs = Vec::new();
    let mut per_prompt_count: HashMap<String, usize> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let bad = |msg: &str| Error::Parse {
            line: line_no,
            message: msg.to_string(),
        };
        match (rec.chosen, rec.rejected, rec.prompt_id) {
            (Some(chosen), Some(rejected), Some(prompt_id)) => {
                raw_pairs.push((line_no, prompt_id, chosen, rejected));
            }
            (Some(_), _, _) | (_, Some(_), _) => {
                return Err(bad("pair records need prompt_id, chosen and rejected"));
            }
            (None, None, Some(prompt_id)) => {
                let text = rec.text.ok_or_else(|| bad("response record without text"))?;
                let n = per_prompt_count.entry(prompt_id.clone()).or_default();
                let id = rec.id.unwrap_or_else(|| format!("{prompt_id}/r{n}"));
                *n += 1;
                let token_length = tokenizer.count(&text);
                responses.push(Response {
                    id,
                    prompt_id,
                    text,
                    score: rec.score,
                    token_length,
                });
            }
            (None, None, None) => {
                let id = rec.id.ok_or_else(|| bad("record has neither id nor prompt_id"))?;
                let text = rec.text.ok_or_else(|| bad("prompt record without text"))?;
                prompts.push(Prompt { id, text });
            }
        }
    }

    let index: HashMap<&str, &Response> = responses.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut pairs = Vec::with_capacity(raw_pairs.len());
    for (line_no, prompt_id, chosen, rejected) in &raw_pairs {
        let c = index
            .get(chosen.as_str())
            .ok_or_else(|| Error::DanglingReference(chosen.clone()))?;
        let r = index
            .get(rejected.as_str())
            .ok_or_else(|| Error::DanglingReference(rejected.clone()))?;
        let pair = PreferencePair::from_responses(c, r).map_err(|e| Error::Parse {
            line: *line_no,
            message: e.to_string(),
        })?;
        if &pair.prompt_id != prompt_id {
            return Err(Error::Parse {
                line: *line_no,
                message: format!("pair prompt `{prompt_id}` does not own its responses"),
            });
        }
        pairs.push(pair);
    }
    Corpus::new(prompts, responses, pairs)
}

pub fn knowledge_source(corpus: &Corpus) -> Result<KnowledgeSource> {
    let breadth = corpus.prompts.len();
    if breadth == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(KnowledgeSource {
        breadth,
        depth: corpus.pairs.len() as f64 / breadth as f64,
    })
}

/// Breadth/depth target after trading breadth for depth by ratio `s`.
/// Breadth rounds down but never below one; depth scales by `1/s`.
pub fn scaled_target(ks: KnowledgeSource, s: f64) -> Result<KnowledgeSource> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidScale(s));
    }
    // Guard against products like 0.1 * 70 landing a hair under an integer.
    let breadth = ((ks.breadth as f64 * s) + 1e-9).floor().max(1.0) as usize;
    Ok(KnowledgeSource {
        breadth,
        depth: ks.depth / s,
    })
}

/// Splits prompts into a seed set (for supervised warmup) and the rest.
///
/// The seed side keeps only each prompt and its chosen responses; the rest
/// side keeps every record of its prompts. Both sides preserve input order.
pub fn split_seed(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidFraction(fraction));
    }
    let n = corpus.prompts.len();
    let take = ((n as f64 * fraction).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut in_seed = vec![false; n];
    for &i in &order[..take] {
        in_seed[i] = true;
    }

    let seed_ids: Vec<String> = (0..n).filter(|&i| in_seed[i]).map(|i| corpus.prompts[i].id.clone()).collect();
    let rest_ids: Vec<String> = (0..n).filter(|&i| !in_seed[i]).map(|i| corpus.prompts[i].id.clone()).collect();

    let mut rest = corpus.restrict_to(&rest_ids);
    rest.seed_fraction = fraction;

    let seed_set: HashSet<&str> = seed_ids.iter().map(String::as_str).collect();
    let mut chosen: HashSet<&str> = corpus
        .pairs
        .iter()
        .filter(|p| seed_set.contains(p.prompt_id.as_str()))
        .map(|p| p.chosen.as_str())
        .collect();
    // Prompts without pairs fall back to their best-scored response.
    let paired: HashSet<&str> = corpus.pairs.iter().map(|p| p.prompt_id.as_str()).collect();
    let mut best: HashMap<&str, &Response> = HashMap::new();
    for r in &corpus.responses {
        let pid = r.prompt_id.as_str();
        if !seed_set.contains(pid) || paired.contains(pid) || r.score.is_none() {
            continue;
        }
        match best.get(pid) {
            Some(b) if b.score >= r.score => {}
            _ => {
                best.insert(pid, r);
            }
        }
    }
    chosen.extend(best.values().map(|r| r.id.as_str()));

    let seed_corpus = Corpus {
        prompts: corpus.prompts.iter().filter(|p| seed_set.contains(p.id.as_str())).cloned().collect(),
        responses: corpus.responses.iter().filter(|r| chosen.contains(r.id.as_str())).cloned().collect(),
        pairs: Vec::new(),
        seed_fraction: fraction,
    };
    Ok((seed_corpus, rest))
}
