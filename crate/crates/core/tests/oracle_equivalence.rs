#[path = "support/oracles.rs"]
mod oracles;

use nqr_core::evaluation::{pairwise_accuracy, ranking_metrics};
use nqr_core::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use nqr_core::prefgen::hac::{hac_average_linkage, TIE_TOLERANCE};
use nqr_core::query::{evaluate_query, QueryGraph, Structure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let n = rng.random_range(4..=30);
    let r = rng.random_range(1..=3);
    let m = rng.random_range(n..=4 * n);
    let triples: Vec<Triple> = (0..m)
        .map(|_| {
            Triple::new(
                rng.random_range(0..n) as u32,
                rng.random_range(0..r) as u32,
                rng.random_range(0..n) as u32,
            )
        })
        .collect();
    KnowledgeGraph::new(n, r, triples).unwrap()
}

fn random_query(kg: &KnowledgeGraph, s: Structure, rng: &mut ChaCha8Rng) -> QueryGraph {
    // anchors drawn from entities with outgoing edges when possible
    let heads: Vec<u32> = kg.triples().iter().map(|t| t.head.0).collect();
    let anchors = (0..s.num_anchors())
        .map(|_| EntityId(heads[rng.random_range(0..heads.len())]))
        .collect();
    let rels = (0..s.num_relations())
        .map(|_| RelationId(rng.random_range(0..kg.num_relations()) as u32))
        .collect();
    QueryGraph::new(s, anchors, rels).unwrap()
}

#[test]
fn query_evaluation_matches_exhaustive_bindings() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut nonempty = [0usize; 14];
    for _ in 0..200 {
        let kg = random_graph(&mut rng);
        for (i, s) in Structure::ALL.into_iter().enumerate() {
            let q = random_query(&kg, s, &mut rng);
            let fast = evaluate_query(&kg, &q).unwrap().answers;
            let slow = oracles::brute_force_answers(&kg, &q);
            assert_eq!(fast, slow, "{s} on {:?}", q);
            nonempty[i] += (!slow.is_empty()) as usize;
        }
    }
    for (s, k) in Structure::ALL.iter().zip(nonempty) {
        assert!(k >= 20, "{s}: only {k} non-empty answer sets");
    }
}

#[test]
fn hac_matches_naive_clustering() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..200 {
        let n = rng.random_range(2..=12);
        let dim = rng.random_range(2..=6);
        let mut vectors: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        if case % 5 == 0 && n > 2 {
            // exact duplicates force zero-distance ties
            vectors[n - 1] = vectors[0].clone();
        }
        let fast = hac_average_linkage(&vectors).unwrap();
        let slow = oracles::naive_hac(&vectors, TIE_TOLERANCE);
        assert_eq!(fast.merges().len(), slow.len());
        for (a, b) in fast.merges().iter().zip(&slow) {
            assert_eq!((a.left, a.right), (b.left, b.right), "case {case}");
            assert!((a.distance - b.distance).abs() < 1e-9, "case {case}");
        }
    }
}

#[test]
fn metrics_match_sort_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..500 {
        let n = rng.random_range(3..=40);
        // coarse values so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 4.0).collect();
        let mut ids: Vec<u32> = (0..n as u32).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        let k = rng.random_range(2..=n.min(12));
        let split = rng.random_range(1..k);
        let pos: Vec<EntityId> = ids[..split].iter().map(|&i| EntityId(i)).collect();
        let neg: Vec<EntityId> = ids[split..k].iter().map(|&i| EntityId(i)).collect();
        let pa = pairwise_accuracy(&scores, &pos, &neg).unwrap();
        assert!((pa - oracles::pa_by_sort(&scores, &pos, &neg)).abs() < 1e-12);

        let mut answers: Vec<EntityId> = ids[..k].iter().map(|&i| EntityId(i)).collect();
        answers.sort();
        let m = ranking_metrics(&scores, &answers).unwrap();
        assert!((m.mrr - oracles::mrr_by_enumeration(&scores, &answers)).abs() < 1e-12);
    }
}
