#[path = "support/fixtures.rs"]
mod fixtures;
#[path = "support/oracles.rs"]
mod oracles;

use std::sync::Arc;

use nqr_core::evaluation::{aggregate, evaluate, pairwise_accuracy, ranking_metrics, reveal_order, run_protocol};
use nqr_core::model::NqrParameters;
use nqr_core::prefgen::Split;
use nqr_core::rerank::{cosine_rerank, CosineConfig, IdentityReranker, NqrReranker, Reranker};
use nqr_core::embed::EmbeddingTable;
use nqr_core::{EntityId, Label, Preference};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn null_rerankers_reproduce_base_metrics_at_every_step() {
    let t = fixtures::tiny();
    let table = Arc::new(t.table.clone());
    let zero = NqrReranker::new(Arc::new(NqrParameters::init(table.dim(), 1).with_zero_head()), table).unwrap();
    let rerankers: [&dyn Reranker; 2] = [&IdentityReranker, &zero];
    for r in rerankers {
        for inst in t.dataset.split(Split::Test) {
            let base = &t.scores.get(inst.id).unwrap().scores;
            for k in 0..inst.preference_sets.len() {
                let trace = run_protocol(r, inst, k, base, 10).unwrap();
                assert!(!trace.steps.is_empty());
                for s in &trace.steps {
                    assert_eq!(s.pa, trace.base_pa, "{}", r.name());
                    assert_eq!(s.metrics, trace.base, "{}", r.name());
                }
            }
        }
    }
}

#[test]
fn protocol_caps_steps_and_alternates_labels() {
    let t = fixtures::tiny();
    let traces = evaluate(&IdentityReranker, t.dataset.split(Split::Valid), &t.scores, 10).unwrap();
    for tr in &traces {
        let inst = t.dataset.get(tr.query).unwrap();
        let set = &inst.preference_sets[tr.set_index];
        assert_eq!(tr.steps.len(), set.len().min(10));
        assert_eq!(tr.steps[0].revealed.label, Label::Preferred);
        if set.positives().len() >= 2 && set.negatives().len() >= 2 {
            assert_eq!(tr.steps[1].revealed.label, Label::NonPreferred);
            assert_eq!(tr.steps[2].revealed.label, Label::Preferred);
        }
    }
    let agg = aggregate(&traces).unwrap();
    assert_eq!(agg.traces, traces.len());
    assert!((agg.av_mrr - agg.base.mrr).abs() < 1e-12);
}

#[test]
fn reveal_order_continues_with_the_longer_side() {
    let p = |e: u32, l: u8| Preference::new(EntityId(e), Label::try_from(l).unwrap());
    let pairs = [p(0, 0), p(1, 1), p(2, 0), p(3, 0), p(4, 1), p(5, 0)];
    let order: Vec<u32> = reveal_order(&pairs).iter().map(|x| x.entity.0).collect();
    assert_eq!(order, vec![1, 0, 4, 2, 3, 5]);
}

fn random_table(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, EmbeddingTable) {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let table = EmbeddingTable::from_rows(&rows).unwrap();
    (rows, table)
}

fn random_pairs(n: usize, t: usize, rng: &mut ChaCha8Rng) -> Vec<Preference> {
    (0..t)
        .map(|_| {
            let l = if rng.random_bool(0.5) { Label::Preferred } else { Label::NonPreferred };
            Preference::new(EntityId(rng.random_range(0..n) as u32), l)
        })
        .collect()
}

#[test]
fn cosine_matches_double_loop_and_is_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..100 {
        let n = rng.random_range(2..30);
        let (rows, table) = random_table(n, rng.random_range(2..8), &mut rng);
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let cfg = CosineConfig::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)).unwrap();
        let a = random_pairs(n, rng.random_range(1..6), &mut rng);
        let b = random_pairs(n, rng.random_range(1..6), &mut rng);
        let got = cosine_rerank(&base, &a, &table, &cfg).unwrap();
        let want = oracles::cosine_double_loop(&base, &a, &rows, cfg.alpha_p, cfg.alpha_n);
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
        let both: Vec<Preference> = a.iter().chain(&b).copied().collect();
        let ab = cosine_rerank(&base, &both, &table, &cfg).unwrap();
        let only_b = cosine_rerank(&base, &b, &table, &cfg).unwrap();
        for e in 0..n {
            let sum = base[e] + (got[e] - base[e]) + (only_b[e] - base[e]);
            assert!((ab[e] - sum).abs() < 1e-12);
        }
    }
}

#[test]
fn cosine_self_similarity_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let (_, table) = random_table(10, 6, &mut rng);
    let cfg = CosineConfig::new(0.5, 0.25).unwrap();
    let base = vec![0.0; 10];
    let up = cosine_rerank(&base, &[Preference::preferred(3)], &table, &cfg).unwrap();
    assert_eq!(up[3], 0.5);
    let down = cosine_rerank(&base, &[Preference::non_preferred(3)], &table, &cfg).unwrap();
    assert_eq!(down[3], -0.25);
}

#[test]
fn cosine_weights_must_lie_strictly_inside_unit_interval() {
    assert!(CosineConfig::new(0.0, 0.5).is_err());
    assert!(CosineConfig::new(0.5, 1.0).is_err());
}

proptest! {
    #[test]
    fn metrics_ignore_strictly_increasing_transforms(
        scores in prop::collection::vec(-5.0f64..5.0, 6..30),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let n = scores.len();
        let pos = vec![EntityId(0), EntityId(1)];
        let neg = vec![EntityId(2), EntityId(3), EntityId((n - 1) as u32)];
        let warped: Vec<f64> = scores.iter().map(|s| (scale * s + shift).exp()).collect();
        prop_assert_eq!(
            pairwise_accuracy(&scores, &pos, &neg).unwrap(),
            pairwise_accuracy(&warped, &pos, &neg).unwrap()
        );
        let answers = vec![EntityId(0), EntityId(2), EntityId(4)];
        let a = ranking_metrics(&scores, &answers).unwrap();
        let b = ranking_metrics(&warped, &answers).unwrap();
        prop_assert!((a.mrr - b.mrr).abs() < 1e-12);
    }

    #[test]
    fn pairwise_accuracy_is_a_fraction(scores in prop::collection::vec(-1.0f64..1.0, 5..20)) {
        let pa = pairwise_accuracy(&scores, &[EntityId(0), EntityId(1)], &[EntityId(2), EntityId(3)]).unwrap();
        prop_assert!((0.0..=1.0).contains(&pa));
        let swapped = pairwise_accuracy(&scores, &[EntityId(2), EntityId(3)], &[EntityId(0), EntityId(1)]).unwrap();
        prop_assert!(pa + swapped <= 1.0 + 1e-12);
    }
}
