//! Ontology-mediated conjunctive query answering over incomplete knowledge
//! graphs.
//!
//! Combines DL-Lite reasoning (saturation, query rewriting,
//! ontology-guided training-data generation) with a trainable box-embedding
//! model and a ranking-based evaluation harness for inductive, deductive and
//! combined test settings.

pub mod checkpoint;
pub mod cli;
pub mod demo;
pub mod error;
pub mod eval;
pub mod kg;
pub mod model;
pub mod naive;
pub mod ontology;
pub mod query;
pub mod rewrite;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
