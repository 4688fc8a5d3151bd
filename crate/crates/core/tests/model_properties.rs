#[path = "support/oracles.rs"]
mod oracles;

use std::sync::Arc;

use nqr_core::embed::EmbeddingTable;
use nqr_core::model::{attention_passes, embed_preferences, rerank, NqrParameters, PreparedNqr};
use nqr_core::rerank::{NqrReranker, Reranker};
use nqr_core::{EntityId, Label, Preference};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn random_pairs(n: usize, t: usize, rng: &mut ChaCha8Rng) -> Vec<Preference> {
    (0..t)
        .map(|_| {
            let label = if rng.random_bool(0.5) { Label::Preferred } else { Label::NonPreferred };
            Preference::new(EntityId(rng.random_range(0..n) as u32), label)
        })
        .collect()
}

#[test]
fn preference_embedding_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let dim = 16;
    let table = EmbeddingTable::from_rows(&random_rows(50, dim, &mut rng)).unwrap();
    let params = NqrParameters::init(dim, 7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t = rng.random_range(1..=12);
        let mut pairs = random_pairs(50, t, &mut rng);
        let m = embed_preferences(&params, &table, &pairs).unwrap();
        pairs.shuffle(&mut rng);
        let shuffled = embed_preferences(&params, &table, &pairs).unwrap();
        for (a, b) in m.iter().zip(&shuffled) {
            worst = worst.max((a - b).abs());
        }
    }
    println!("max change under permutation: {worst:.2e}");
    assert!(worst < 1e-10);
}

#[test]
fn fast_path_matches_straight_line_recompute() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..50 {
        let dim = rng.random_range(2..=8);
        let n = rng.random_range(3..=40);
        let rows = random_rows(n, dim, &mut rng);
        let table = EmbeddingTable::from_rows(&rows).unwrap();
        let params = NqrParameters::init(dim, rng.random());
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let pairs = random_pairs(n, rng.random_range(1..=6), &mut rng);
        let fast = rerank(&params, &base, &pairs, &table).unwrap();
        let slow = oracles::nqr_straight_line(&params, &rows, &base, &pairs);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn zero_head_is_bit_exact_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let rows = random_rows(30, 8, &mut rng);
    let table = EmbeddingTable::from_rows(&rows).unwrap();
    let params = NqrParameters::init(8, 3).with_zero_head();
    for _ in 0..20 {
        let base: Vec<f64> = (0..30).map(|_| rng.random_range(-5.0..5.0)).collect();
        let pairs = random_pairs(30, rng.random_range(1..=8), &mut rng);
        assert_eq!(rerank(&params, &base, &pairs, &table).unwrap(), base);
    }
}

#[test]
fn one_encoder_pass_per_rerank() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let table = Arc::new(EmbeddingTable::from_rows(&random_rows(200, 8, &mut rng)).unwrap());
    let params = Arc::new(NqrParameters::init(8, 1));
    let r = NqrReranker::new(params, table).unwrap();
    let base = vec![0.5; 200];
    let pairs = random_pairs(200, 7, &mut rng);
    let before = attention_passes();
    r.rerank(&base, &pairs).unwrap();
    assert_eq!(attention_passes() - before, 1);
}

#[test]
fn prepared_model_is_reusable_across_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let table = EmbeddingTable::from_rows(&random_rows(40, 6, &mut rng)).unwrap();
    let params = NqrParameters::init(6, 2);
    let prepared = PreparedNqr::new(&params, &table).unwrap();
    for _ in 0..10 {
        let base: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let pairs = random_pairs(40, 4, &mut rng);
        assert_eq!(
            prepared.rerank(&base, &pairs).unwrap(),
            rerank(&params, &base, &pairs, &table).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjustment_stays_inside_unit_band(seed in any::<u64>(), t in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = EmbeddingTable::from_rows(&random_rows(25, 5, &mut rng)).unwrap();
        let params = NqrParameters::init(5, seed);
        let base: Vec<f64> = (0..25).map(|_| rng.random_range(-10.0..10.0)).collect();
        let pairs = random_pairs(25, t, &mut rng);
        let adj = rerank(&params, &base, &pairs, &table).unwrap();
        for (a, b) in adj.iter().zip(&base) {
            prop_assert!((a - b).abs() < 1.0);
        }
    }

    #[test]
    fn permutation_invariance_holds_for_random_models(seed in any::<u64>(), t in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = EmbeddingTable::from_rows(&random_rows(20, 4, &mut rng)).unwrap();
        let params = NqrParameters::init(4, seed ^ 1);
        let base: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut pairs = random_pairs(20, t, &mut rng);
        let a = rerank(&params, &base, &pairs, &table).unwrap();
        pairs.reverse();
        let b = rerank(&params, &base, &pairs, &table).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}
