//! Interactive reranking of knowledge-graph query answers under soft
//! constraints given as preferred and non-preferred example entities.

pub mod baselines;
pub mod basescore;
pub mod diffcore;
pub mod embed;
pub mod evaluation;
pub mod error;
pub mod kg;
pub mod matrix_io;
pub mod model;
pub mod preference;
pub mod prefgen;
pub mod query;
pub mod ranking;
pub mod rerank;
pub mod seed;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use kg::{EntityId, KnowledgeGraph, RelationId, Triple};
pub use preference::{Label, Preference, PreferenceSet};
