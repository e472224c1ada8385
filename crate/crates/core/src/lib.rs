//! Graph embeddings, their pairwise dependence, and greedy ensembles of
//! embeddings for multi-label node classification.

pub mod classify;
pub mod diversity;
pub mod embed;
pub mod ensemble;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod synthgen;

pub use error::{Error, Result};
