//! Inductive knowledge-graph relation reasoning with relational path contrast.
//!
//! The library covers the whole pipeline: loading fully-inductive triple
//! splits, extracting enclosing subgraphs with double-radius node labels,
//! enumerating relational paths, training an attention-augmented relational
//! GCN with a joint margin / path-contrast / supervised objective, ranking
//! and classification evaluation, and exporting the attended paths as
//! first-order rules with confidences.

pub mod error;
pub mod evaluator;
pub mod kg;
pub mod model;
pub mod paths;
pub mod rules;
pub mod subgraph;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
