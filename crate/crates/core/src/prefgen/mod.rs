//! Preference-data generation: cluster each answer set, then turn large
//! enough clusters into labelled preference sets.

pub mod benchmark;
pub mod hac;
pub mod partition;

pub use benchmark::{
    generate_benchmark, BenchmarkConfig, Dataset, DatasetStats, GenerationReport, QueryInstance,
    Split,
};
pub use hac::{hac_average_linkage, Dendrogram, Merge};
pub use partition::{partition_answers, preference_sets_for};
