//! Desk-scale synthetic inputs: a community-structured random graph with a
//! held-out edge split, clustered entity embeddings, grounded query sampling
//! for all 14 structures, and planted base scores.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basescore::{synthetic_scores, ScoreTable, SyntheticScoreConfig};
use crate::embed::{synthesize_embeddings, EmbeddingTable, SynthEmbeddingConfig};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::prefgen::Dataset;
use crate::query::{evaluate_query, QueryGraph, Structure};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGraphConfig {
    pub num_entities: usize,
    pub num_relations: usize,
    /// Tails of one (head, relation) pair are drawn from a single community.
    pub num_communities: usize,
    pub heads_per_relation: usize,
    pub min_fanout: usize,
    pub max_fanout: usize,
    /// Share of triples withheld from the training graph.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for SynthGraphConfig {
    fn default() -> Self {
        Self {
            num_entities: 2000,
            num_relations: 12,
            num_communities: 12,
            heads_per_relation: 150,
            min_fanout: 8,
            max_fanout: 64,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Returns `(full, train)` graphs over the same vocabulary.
pub fn synthesize_graph(cfg: &SynthGraphConfig) -> Result<(KnowledgeGraph, KnowledgeGraph)> {
    let n = cfg.num_entities;
    if n == 0 || cfg.num_relations == 0 || cfg.num_communities == 0 {
        return Err(Error::InvalidArgument("graph needs entities, relations and communities".into()));
    }
    if cfg.min_fanout == 0 || cfg.min_fanout > cfg.max_fanout {
        return Err(Error::InvalidArgument("fanout range is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let communities: Vec<Vec<u32>> = {
        let mut c = vec![Vec::new(); cfg.num_communities];
        for e in 0..n as u32 {
            c[rng.random_range(0..cfg.num_communities)].push(e);
        }
        c.into_iter().filter(|m| !m.is_empty()).collect()
    };
    let mut triples = Vec::new();
    for r in 0..cfg.num_relations as u32 {
        let heads = rand::seq::index::sample(&mut rng, n, cfg.heads_per_relation.min(n));
        for h in heads {
            let pool = communities.choose(&mut rng).expect("nonempty");
            let fanout = rng.random_range(cfg.min_fanout..=cfg.max_fanout).min(pool.len());
            for t in pool.choose_multiple(&mut rng, fanout) {
                triples.push(Triple::new(h as u32, r, *t));
            }
        }
    }
    let full = KnowledgeGraph::new(n, cfg.num_relations, triples)?;
    let mut split_rng = rng_for(cfg.seed, 1);
    let kept: Vec<bool> = full
        .triples()
        .iter()
        .map(|_| split_rng.random::<f64>() >= cfg.holdout_fraction)
        .collect();
    let mut i = 0;
    let train = full.filter_triples(|_| {
        i += 1;
        kept[i - 1]
    });
    Ok((full, train))
}

fn incoming(kg: &KnowledgeGraph, t: EntityId) -> Vec<(RelationId, EntityId)> {
    let mut out = Vec::new();
    for r in 0..kg.num_relations() as u32 {
        for &h in kg.heads(t, RelationId(r)) {
            out.push((RelationId(r), h));
        }
    }
    out
}

fn random_edge<R: Rng>(kg: &KnowledgeGraph, rng: &mut R) -> Option<(EntityId, RelationId)> {
    kg.triples()
        .choose(rng)
        .map(|t| (t.head, t.relation))
}

/// One step backwards from `node` along a random incoming edge.
fn back<R: Rng>(kg: &KnowledgeGraph, node: EntityId, rng: &mut R) -> Option<(RelationId, EntityId)> {
    incoming(kg, node).choose(rng).copied()
}

fn distinct_back<R: Rng>(
    kg: &KnowledgeGraph,
    node: EntityId,
    k: usize,
    rng: &mut R,
) -> Option<Vec<(RelationId, EntityId)>> {
    let inc = incoming(kg, node);
    if inc.len() < k {
        return None;
    }
    let picks: Vec<(RelationId, EntityId)> = inc.choose_multiple(rng, k).copied().collect();
    let anchors: BTreeSet<(RelationId, EntityId)> = picks.iter().copied().collect();
    (anchors.len() == k).then_some(picks)
}

/// Samples one query of `structure` grounded in `kg`, so that its positive
/// part has at least one satisfying binding. Returns `None` when the random
/// walk dead-ends.
pub fn ground_query<R: Rng>(
    kg: &KnowledgeGraph,
    structure: Structure,
    rng: &mut R,
) -> Option<QueryGraph> {
    let target = kg.triples().choose(rng)?.tail;
    let (anchors, relations): (Vec<EntityId>, Vec<RelationId>) = match structure {
        Structure::P1 => {
            let (r, a) = back(kg, target, rng)?;
            (vec![a], vec![r])
        }
        Structure::P2 => {
            let (r1, v1) = back(kg, target, rng)?;
            let (r0, a) = back(kg, v1, rng)?;
            (vec![a], vec![r0, r1])
        }
        Structure::P3 => {
            let (r2, v2) = back(kg, target, rng)?;
            let (r1, v1) = back(kg, v2, rng)?;
            let (r0, a) = back(kg, v1, rng)?;
            (vec![a], vec![r0, r1, r2])
        }
        Structure::I2 | Structure::U2 => {
            let p = distinct_back(kg, target, 2, rng)?;
            (vec![p[0].1, p[1].1], vec![p[0].0, p[1].0])
        }
        Structure::I3 => {
            let p = distinct_back(kg, target, 3, rng)?;
            (vec![p[0].1, p[1].1, p[2].1], vec![p[0].0, p[1].0, p[2].0])
        }
        Structure::Ip => {
            let (r2, v1) = back(kg, target, rng)?;
            let p = distinct_back(kg, v1, 2, rng)?;
            (vec![p[0].1, p[1].1], vec![p[0].0, p[1].0, r2])
        }
        Structure::Pi => {
            let p = distinct_back(kg, target, 2, rng)?;
            let (r1, v1) = p[0];
            let (r0, a0) = back(kg, v1, rng)?;
            (vec![a0, p[1].1], vec![r0, r1, p[1].0])
        }
        Structure::In2 => {
            let (r0, a0) = back(kg, target, rng)?;
            let (a1, r1) = random_edge(kg, rng)?;
            (vec![a0, a1], vec![r0, r1])
        }
        Structure::In3 => {
            let p = distinct_back(kg, target, 2, rng)?;
            let (a2, r2) = random_edge(kg, rng)?;
            (vec![p[0].1, p[1].1, a2], vec![p[0].0, p[1].0, r2])
        }
        Structure::Inp => {
            let (r2, v1) = back(kg, target, rng)?;
            let (r0, a0) = back(kg, v1, rng)?;
            let (a1, r1) = random_edge(kg, rng)?;
            (vec![a0, a1], vec![r0, r1, r2])
        }
        Structure::Pin => {
            let (r1, v1) = back(kg, target, rng)?;
            let (r0, a0) = back(kg, v1, rng)?;
            let (a1, r2) = random_edge(kg, rng)?;
            (vec![a0, a1], vec![r0, r1, r2])
        }
        Structure::Pni => {
            let (r2, a1) = back(kg, target, rng)?;
            let (_, v1) = back(kg, target, rng)?;
            let (r0, a0) = back(kg, v1, rng)?;
            let r1 = *kg.out_relations(v1).choose(rng)?;
            (vec![a0, a1], vec![r0, r1, r2])
        }
        Structure::Up => {
            let (r2, v1) = back(kg, target, rng)?;
            let (r0, a0) = back(kg, v1, rng)?;
            let (a1, r1) = random_edge(kg, rng)?;
            (vec![a0, a1], vec![r0, r1, r2])
        }
    };
    QueryGraph::new(structure, anchors, relations).ok()
}

/// Draws up to `count` distinct grounded queries of `structure` whose answer
/// count on `kg` lies in `[min_answers, max_answers]`.
pub fn sample_queries(
    kg: &KnowledgeGraph,
    structure: Structure,
    count: usize,
    min_answers: usize,
    max_answers: usize,
    seed: u64,
) -> Result<Vec<QueryGraph>> {
    let mut rng = rng_for(seed, structure as u64);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let max_attempts = 200 * count.max(1);
    for _ in 0..max_attempts {
        if out.len() >= count {
            break;
        }
        let Some(q) = ground_query(kg, structure, &mut rng) else {
            continue;
        };
        let key = (q.anchors().to_vec(), q.relations().to_vec());
        if !seen.insert(key) {
            continue;
        }
        let n = evaluate_query(kg, &q)?.len();
        if (min_answers..=max_answers).contains(&n) {
            out.push(q);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub graph: SynthGraphConfig,
    pub clusters: usize,
    pub dim: usize,
    pub spread: f64,
    /// Candidate 1p queries; other structures use `queries_per_structure`.
    pub queries_1p: usize,
    pub queries_per_structure: usize,
    pub min_answers: usize,
    pub max_answers: usize,
    pub mu_true: f64,
    pub mu_false: f64,
    pub sigma: f64,
    /// Min-max normalize each synthetic score vector to `[0, 1]`.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            graph: SynthGraphConfig::default(),
            clusters: 5,
            dim: 64,
            spread: 0.1,
            queries_1p: 160,
            queries_per_structure: 30,
            min_answers: 10,
            max_answers: 100,
            mu_true: 2.0,
            mu_false: 0.0,
            sigma: 0.1,
            normalize: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub full: KnowledgeGraph,
    pub train: KnowledgeGraph,
    pub table: EmbeddingTable,
    /// Ground-truth embedding cluster of each entity.
    pub clusters: Vec<usize>,
    pub queries: Vec<QueryGraph>,
}

pub fn synthesize_world(cfg: &SynthConfig) -> Result<SynthWorld> {
    let graph_cfg = SynthGraphConfig {
        seed: derive_seed(cfg.seed, 10),
        ..cfg.graph.clone()
    };
    let (full, train) = synthesize_graph(&graph_cfg)?;
    let (table, clusters) = synthesize_embeddings(
        full.num_entities(),
        &SynthEmbeddingConfig {
            n_clusters: cfg.clusters,
            dim: cfg.dim,
            spread: cfg.spread,
            seed: derive_seed(cfg.seed, 11),
        },
    )?;
    let mut queries = Vec::new();
    for s in Structure::ALL {
        let count = if s == Structure::P1 {
            cfg.queries_1p
        } else {
            cfg.queries_per_structure
        };
        queries.extend(sample_queries(
            &full,
            s,
            count,
            cfg.min_answers,
            cfg.max_answers,
            derive_seed(cfg.seed, 12),
        )?);
    }
    Ok(SynthWorld {
        full,
        train,
        table,
        clusters,
        queries,
    })
}

/// Planted base scores for every instance: answers around `mu_true`, other
/// entities around `mu_false`, optionally min-max normalised, rounded through f32.
pub fn synthesize_base_scores(
    dataset: &Dataset,
    num_entities: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<ScoreTable> {
    let mut table = ScoreTable::new(num_entities);
    for inst in &dataset.instances {
        let score_cfg = SyntheticScoreConfig {
            mu_true: cfg.mu_true,
            mu_false: cfg.mu_false,
            sigma: cfg.sigma,
            seed: derive_seed(seed, inst.id),
        };
        let mut v = synthetic_scores(inst.id, num_entities, &inst.answers.answers, &score_cfg)?;
        if cfg.normalize {
            v.normalize_min_max();
        }
        v.round_to_f32();
        table.insert(v)?;
    }
    Ok(table)
}
