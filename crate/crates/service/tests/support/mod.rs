//! Catalogs for the service tests.

#![allow(dead_code)]

use std::sync::Arc;

use nqr_core::basescore::{ScoreTable, ScoreVector, SyntheticScoreConfig};
use nqr_core::embed::EmbeddingTable;
use nqr_core::model::NqrParameters;
use nqr_core::prefgen::{generate_benchmark, BenchmarkConfig, Dataset, QueryInstance, Split};
use nqr_core::query::{AnswerSet, QueryGraph, Structure};
use nqr_core::synth::{synthesize_base_scores, synthesize_world, SynthConfig, SynthGraphConfig};
use nqr_core::{EntityId, RelationId};
use nqr_service::Catalog;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIM: usize = 6;

/// 200 random entities, one 1p query (id 7) whose answers are 0..10.
/// Entities 3 and 4 share an embedding.
pub fn small_catalog() -> Catalog {
    let n = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    rows[4] = rows[3].clone();
    let table = Arc::new(EmbeddingTable::from_rows(&rows).unwrap());
    let answers: Vec<EntityId> = (0..10).map(EntityId).collect();
    let inst = QueryInstance {
        id: 7,
        split: Split::Test,
        query: QueryGraph::new(Structure::P1, vec![EntityId(50)], vec![RelationId(0)]).unwrap(),
        answers: AnswerSet::all_easy(answers),
        preference_sets: Vec::new(),
    };
    let base: Vec<f64> = (0..n).map(|i| if i < 10 { 2.0 } else { 0.0 } + rng.random_range(-0.3..0.3)).collect();
    let mut scores = ScoreTable::new(n);
    scores.insert(ScoreVector::new(7, base).unwrap()).unwrap();
    let labels = (0..n).map(|i| format!("entity-{i}")).collect();
    Catalog::new(table, Dataset { instances: vec![inst] }, scores)
        .unwrap()
        .with_labels(labels)
        .unwrap()
        .with_checkpoint("zero", NqrParameters::init(DIM, 1).with_zero_head())
        .unwrap()
        .with_checkpoint("default", NqrParameters::init(DIM, 2))
        .unwrap()
}

/// A synthetic benchmark with its graph attached for ad-hoc queries.
pub fn synthetic_catalog() -> (Catalog, Dataset) {
    let cfg = SynthConfig {
        graph: SynthGraphConfig {
            num_entities: 300,
            num_relations: 6,
            num_communities: 5,
            heads_per_relation: 30,
            min_fanout: 8,
            max_fanout: 40,
            holdout_fraction: 0.1,
            seed: 0,
        },
        dim: 8,
        queries_1p: 10,
        queries_per_structure: 1,
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
    let planted = SyntheticScoreConfig {
        mu_true: cfg.mu_true,
        mu_false: cfg.mu_false,
        sigma: cfg.sigma,
        seed: 3,
    };
    let catalog = Catalog::new(Arc::new(world.table.clone()), dataset.clone(), scores)
        .unwrap()
        .with_checkpoint("default", NqrParameters::init(8, 5))
        .unwrap()
        .with_graph(world.full, planted)
        .unwrap();
    (catalog, dataset)
}
