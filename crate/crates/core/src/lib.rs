//! Balanced preference-data curation.
//!
//! The pipeline trades prompt breadth for response-pair depth: prompts are
//! compressed to the members nearest their embedding-cluster centroids,
//! candidate responses are paired by score gap, and each prompt's depth is
//! set by clustering Adam-preconditioned, randomly projected per-pair
//! gradients and keeping the pairs nearest each centroid.

pub mod breadth;
pub mod clustering;
pub mod corpus;
pub mod depth;
pub mod embedder;
pub mod evalkit;
pub mod error;
pub mod gradfeat;
pub mod pipeline;
pub mod toy_policy;

pub use error::{Error, Result};
