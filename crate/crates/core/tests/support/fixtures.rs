//! A small synthetic benchmark shared by the slower integration tests.

#![allow(dead_code)]

use nqr_core::basescore::ScoreTable;
use nqr_core::embed::EmbeddingTable;
use nqr_core::prefgen::{generate_benchmark, BenchmarkConfig, Dataset};
use nqr_core::synth::{synthesize_base_scores, synthesize_world, SynthConfig, SynthGraphConfig};

pub struct Tiny {
    pub dataset: Dataset,
    pub scores: ScoreTable,
    pub table: EmbeddingTable,
}

/// |V| = 200, about 50 queries, d = 8.
pub fn tiny() -> Tiny {
    let cfg = SynthConfig {
        graph: SynthGraphConfig {
            num_entities: 200,
            num_relations: 6,
            num_communities: 5,
            heads_per_relation: 30,
            min_fanout: 8,
            max_fanout: 40,
            holdout_fraction: 0.1,
            seed: 0,
        },
        dim: 8,
        queries_1p: 24,
        queries_per_structure: 2,
        min_answers: 10,
        max_answers: 60,
        seed: 4,
        ..SynthConfig::default()
    };
    let world = synthesize_world(&cfg).unwrap();
    let bench = BenchmarkConfig {
        max_answers: 60,
        ..BenchmarkConfig::default()
    };
    let (dataset, _) =
        generate_benchmark(&world.full, &world.train, &world.queries, &world.table, &bench).unwrap();
    let scores = synthesize_base_scores(&dataset, world.table.len(), &cfg, 9).unwrap();
    Tiny {
        dataset,
        scores,
        table: world.table,
    }
}
