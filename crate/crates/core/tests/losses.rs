#[path = "support/oracles.rs"]
mod oracles;

use nqr_core::diffcore::{Adam, AdamConfig, Tensor2};
use nqr_core::training::{
    kl_answer_loss, margin_preference_loss, ranknet_loss, sample_interaction_subset,
    sample_training_subset, total_loss, SubsetMode,
};
use nqr_core::{EntityId, Label, Preference};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ids(v: &[u32]) -> Vec<EntityId> {
    v.iter().map(|&i| EntityId(i)).collect()
}

#[test]
fn margin_loss_examples() {
    let a = [0.7, 0.5];
    assert_eq!(margin_preference_loss(&a, &ids(&[0]), &ids(&[1]), 0.1).unwrap(), 0.0);
    let eq = [0.3, 0.3, 0.3];
    let l = margin_preference_loss(&eq, &ids(&[0]), &ids(&[1, 2]), 0.1).unwrap();
    assert!((l - 0.2).abs() < 1e-15);
    assert!(margin_preference_loss(&eq, &[], &ids(&[1]), 0.1).is_err());
}

#[test]
fn pair_losses_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..200 {
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (pos, neg) = (ids(&[0, 1]), ids(&[2, 3, 4]));
        let gamma = rng.random_range(0.01..0.5);
        let m = margin_preference_loss(&a, &pos, &neg, gamma).unwrap();
        assert!((m - oracles::margin_by_enumeration(&a, &pos, &neg, gamma)).abs() < 1e-12);
        let r = ranknet_loss(&a, &pos, &neg).unwrap();
        assert!((r - oracles::ranknet_by_enumeration(&a, &pos, &neg)).abs() < 1e-12);

        let base: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = rng.random_range(0.0..10.0);
        let t = total_loss(&a, &base, &pos, &neg, gamma, lambda).unwrap();
        let expected = oracles::margin_by_enumeration(&a, &pos, &neg, gamma)
            + lambda * oracles::kl_direct(&base, &a);
        assert!((t - expected).abs() < 1e-12);
    }
}

#[test]
fn ranknet_examples() {
    let l = ranknet_loss(&[0.0, 0.0], &ids(&[0]), &ids(&[1])).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(ranknet_loss(&[10.0, 0.0], &ids(&[0]), &ids(&[1])).unwrap() < 1e-4);
    // far from saturation the stable form must not overflow
    let huge = ranknet_loss(&[-800.0, 800.0], &ids(&[0]), &ids(&[1])).unwrap();
    assert!((huge - 1600.0).abs() < 1e-9);
}

#[test]
fn kl_examples() {
    assert_eq!(kl_answer_loss(&[0.1, 0.7, 0.2], &[0.1, 0.7, 0.2]).unwrap(), 0.0);
    let shifted = kl_answer_loss(&[0.1, 0.7, 0.2], &[3.1, 3.7, 3.2]).unwrap();
    assert!(shifted.abs() < 1e-15);
    let two = kl_answer_loss(&[0.0, 0.0], &[0.0, 3f64.ln()]).unwrap();
    let hand = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    assert!((two - hand).abs() < 1e-14);
    assert!((two - 0.1438).abs() < 1e-4);
}

#[test]
fn kl_is_stable_for_large_scores() {
    let base = [1000.0, 0.0, -1000.0];
    let adj = [999.0, 1.0, -1000.0];
    let v = kl_answer_loss(&base, &adj).unwrap();
    assert!(v.is_finite() && v >= 0.0);
}

#[test]
fn adam_matches_hand_computation() {
    let mut w = Tensor2::from_vec(1, 2, vec![1.0, -2.0]).unwrap();
    let mut adam = Adam::new(AdamConfig::new(0.1), [&w]);
    adam.step(vec![&mut w], &[Tensor2::from_vec(1, 2, vec![0.5, 0.0]).unwrap()]).unwrap();
    assert!((w.get(0, 0) - 0.900000002).abs() < 1e-15);
    assert_eq!(w.get(0, 1), -2.0);
    adam.step(vec![&mut w], &[Tensor2::from_vec(1, 2, vec![-1.0, 3.0]).unwrap()]).unwrap();
    assert!((w.get(0, 0) - 0.9366103542405654).abs() < 1e-13);
    assert!((w.get(0, 1) - -2.0744136820059964).abs() < 1e-13);
}

fn pairs_of(labels: &[u8]) -> Vec<Preference> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| Preference::new(EntityId(i as u32), Label::try_from(l).unwrap()))
        .collect()
}

#[test]
fn subset_size_is_uniform() {
    let pairs = pairs_of(&[1, 0, 1, 0]);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts = [0usize; 4];
    let draws = 10_000;
    for _ in 0..draws {
        let s = sample_interaction_subset(&pairs, SubsetMode::Subset, &mut rng).unwrap();
        counts[s.len() - 1] += 1;
    }
    for c in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 0.25).abs() <= 0.02, "{counts:?}");
    }
}

#[test]
fn subsets_keep_labels_and_order() {
    let pairs = pairs_of(&[1, 0, 0, 1, 1, 0, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..500 {
        let s = sample_interaction_subset(&pairs, SubsetMode::Subset, &mut rng).unwrap();
        let idx: Vec<usize> = s.iter().map(|p| p.entity.index()).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|p| pairs[p.entity.index()] == *p));
        let prefix = sample_interaction_subset(&pairs, SubsetMode::Prefix, &mut rng).unwrap();
        assert_eq!(prefix[..], pairs[..prefix.len()]);
    }
    let single = pairs_of(&[1]);
    assert_eq!(sample_interaction_subset(&single, SubsetMode::Subset, &mut rng).unwrap(), single);
}

#[test]
fn subset_sampling_is_seeded() {
    let pairs = pairs_of(&[1, 0, 0, 1, 1, 0, 1, 0, 0]);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20)
            .map(|_| sample_training_subset(&pairs, SubsetMode::Subset, &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(5), draw(5));
    assert!(draw(5)
        .iter()
        .all(|s| s.iter().any(|p| p.label == Label::Preferred) && s.iter().any(|p| p.label == Label::NonPreferred)));
}

proptest! {
    #[test]
    fn kl_is_non_negative(base in prop::collection::vec(-20.0f64..20.0, 2..30), noise in prop::collection::vec(-3.0f64..3.0, 30)) {
        let adj: Vec<f64> = base.iter().zip(&noise).map(|(a, b)| a + b).collect();
        prop_assert!(kl_answer_loss(&base, &adj).unwrap() >= 0.0);
    }

    #[test]
    fn kl_ignores_constant_shifts(base in prop::collection::vec(-5.0f64..5.0, 2..30), c in -50.0f64..50.0) {
        let adj: Vec<f64> = base.iter().map(|a| a + c).collect();
        prop_assert!(kl_answer_loss(&base, &adj).unwrap() < 1e-12);
    }

    #[test]
    fn kl_positive_when_distributions_differ(base in prop::collection::vec(-5.0f64..5.0, 2..30), bump in 0.5f64..3.0) {
        let mut adj = base.clone();
        adj[0] += bump;
        prop_assert!(kl_answer_loss(&base, &adj).unwrap() > 0.0);
    }

    #[test]
    fn margin_loss_is_non_negative_and_shift_invariant(
        a in prop::collection::vec(-2.0f64..2.0, 6),
        gamma in 0.01f64..1.0,
        c in -10.0f64..10.0,
    ) {
        let (pos, neg) = (ids(&[0, 1, 2]), ids(&[3, 4, 5]));
        let l = margin_preference_loss(&a, &pos, &neg, gamma).unwrap();
        prop_assert!(l >= 0.0);
        let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
        let ls = margin_preference_loss(&shifted, &pos, &neg, gamma).unwrap();
        prop_assert!((l - ls).abs() < 1e-9);
    }
}
