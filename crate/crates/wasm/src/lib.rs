//! Browser bindings. Every export takes plain numbers or JSON text and
//! returns JSON text; failures come back as `{"error": "..."}`.

use std::collections::BTreeMap;

use bpo_core::clustering::{self, Algorithm, ClusterConfig, QuotaRule};
use bpo_core::depth::{allocate_depth, DepthMethod};
use bpo_core::evalkit::{adjusted_rand_index, synth_generate, SyntheticSpec};
use bpo_core::gradfeat::jl_distortion_check;
use bpo_core::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

fn respond(r: Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

#[derive(Serialize)]
struct Point {
    x: f64,
    y: f64,
    blob: usize,
    cluster: usize,
    selected: bool,
}

/// Planted 2-D blobs, clustered and reduced to the points nearest each
/// centroid.
pub fn cluster_blobs(n: usize, blobs: usize, k: usize, eta: f64, algorithm: &str, seed: u64) -> Result<Value> {
    let algorithm: Algorithm = algorithm.parse()?;
    let data = synth_generate(&SyntheticSpec {
        n_prompts: n,
        n_blobs: blobs,
        dim: 2,
        blob_separation: 8.0,
        responses_per_prompt: 2,
        seed,
        ..Default::default()
    })?;
    let x = &data.embeddings;
    let model = clustering::fit(x, &ClusterConfig::new(algorithm, k, seed))?;
    let sel = clustering::rank_select(x, &model, eta, QuotaRule::Ceil)?;
    let chosen: std::collections::HashSet<&str> = sel.selected_ids.iter().map(String::as_str).collect();
    let truth: Vec<usize> = x.ids().iter().map(|id| data.labels[id]).collect();
    let points: Vec<Point> = x
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| Point {
            x: x.row(i)[0],
            y: x.row(i)[1],
            blob: truth[i],
            cluster: model.assignments[i],
            selected: chosen.contains(id.as_str()),
        })
        .collect();
    Ok(json!({
        "points": points,
        "centroids": model.centroids_in(x),
        "selected": sel.len(),
        "cluster_sizes": sel.cluster_sizes,
        "ari": adjusted_rand_index(&truth, &model.assignments),
        "inertia": model.inertia,
    }))
}

/// Squared-distance ratios of random pairs under a sign projection.
pub fn jl_distortion(source_dim: usize, target_dim: usize, pairs: usize, eps: f64, seed: u64) -> Result<Value> {
    Ok(serde_json::to_value(jl_distortion_check(source_dim, target_dim, pairs, eps, seed)?)?)
}

/// Depth allocation `k_i = ceil(w_i N)` for `{"id": weight}` input. Weights
/// are normalized first.
pub fn allocate(weights_json: &str, budget: usize, min_depth: usize) -> Result<Value> {
    let raw: BTreeMap<String, f64> = serde_json::from_str(weights_json)?;
    let total: f64 = raw.values().sum();
    if raw.is_empty() || !(total > 0.0) {
        return Err(Error::DegenerateWeights("weights must sum to a positive value".into()));
    }
    let weights = raw.into_iter().map(|(k, w)| (k, w / total)).collect();
    let plan = allocate_depth(DepthMethod::Uniform, &weights, budget, min_depth, None)?;
    Ok(json!({
        "depths": plan.depths,
        "weights": plan.weights,
        "total": plan.total(),
        "budget": budget,
    }))
}

#[wasm_bindgen(js_name = clusterBlobs)]
pub fn cluster_blobs_js(n: usize, blobs: usize, k: usize, eta: f64, algorithm: &str, seed: u32) -> String {
    respond(cluster_blobs(n, blobs, k, eta, algorithm, seed as u64))
}

#[wasm_bindgen(js_name = jlDistortion)]
pub fn jl_distortion_js(source_dim: usize, target_dim: usize, pairs: usize, eps: f64, seed: u32) -> String {
    respond(jl_distortion(source_dim, target_dim, pairs, eps, seed as u64))
}

#[wasm_bindgen(js_name = allocateDepth)]
pub fn allocate_js(weights_json: &str, budget: usize, min_depth: usize) -> String {
    respond(allocate(weights_json, budget, min_depth))
}
