use std::collections::HashSet;

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::preference::{Label, Preference, PreferenceSet};

use super::hac::{hac_average_linkage, Dendrogram};

/// Turns dendrogram clusters into preference sets.
///
/// Nodes are visited top-down in descending merge order (the root excluded,
/// since it would label every answer preferred). Every cluster holding at
/// least `ceil(min_fraction * n)` answers yields one set that labels its
/// members preferred and all other answers non-preferred. Leaf `i` of the
/// dendrogram is `answers[i]`; pairs are emitted in `answers` order.
pub fn partition_answers(
    dend: &Dendrogram,
    answers: &[EntityId],
    min_fraction: f64,
    max_sets: usize,
) -> Result<Vec<PreferenceSet>> {
    let n = answers.len();
    if dend.num_leaves() != n {
        return Err(Error::InvalidArgument(format!(
            "dendrogram has {} leaves for {n} answers",
            dend.num_leaves()
        )));
    }
    if !(min_fraction > 0.0 && min_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "min_fraction must lie in (0, 1), got {min_fraction}"
        )));
    }
    let threshold = (min_fraction * n as f64).ceil() as usize;
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut out = Vec::new();

    for node in (0..dend.root()).rev() {
        if out.len() >= max_sets {
            break;
        }
        if dend.size(node) < threshold {
            continue;
        }
        let members = dend.members(node);
        if !seen.insert(members.clone()) {
            continue;
        }
        let mut inside = vec![false; n];
        for &m in &members {
            inside[m] = true;
        }
        let pairs = answers
            .iter()
            .zip(&inside)
            .map(|(&e, &i)| {
                Preference::new(e, if i { Label::Preferred } else { Label::NonPreferred })
            })
            .collect();
        out.push(PreferenceSet::new(pairs)?.with_source(node));
    }
    Ok(out)
}

/// Clusters the answers' embeddings and partitions them. Answers are sorted
/// first, so the result does not depend on their input order.
pub fn preference_sets_for(
    answers: &[EntityId],
    table: &EmbeddingTable,
    min_fraction: f64,
    max_sets: usize,
) -> Result<Vec<PreferenceSet>> {
    let mut sorted = answers.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let vectors = sorted
        .iter()
        .map(|&e| table.get(e).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let dend = hac_average_linkage(&vectors)?;
    partition_answers(&dend, &sorted, min_fraction, max_sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blobs() -> (Vec<Vec<f64>>, Vec<EntityId>) {
        // entities 0..5 along x, 5..10 along y, with small jitter
        let v = (0..10)
            .map(|i| {
                let j = 0.01 * (i as f64);
                if i < 5 {
                    vec![1.0, j, 0.0]
                } else {
                    vec![j, 1.0, 0.0]
                }
            })
            .collect();
        (v, (0..10).map(EntityId).collect())
    }

    #[test]
    fn clean_cluster_splits_five_five() {
        let (v, answers) = two_blobs();
        let d = hac_average_linkage(&v).unwrap();
        let sets = partition_answers(&d, &answers, 0.2, 5).unwrap();
        assert!(!sets.is_empty());
        for s in &sets[..2] {
            assert_eq!(s.positives().len(), 5);
            assert_eq!(s.negatives().len(), 5);
        }
    }

    #[test]
    fn small_clusters_are_not_emitted() {
        let (v, answers) = two_blobs();
        let d = hac_average_linkage(&v).unwrap();
        for s in partition_answers(&d, &answers, 0.2, 100).unwrap() {
            assert!(s.positives().len() >= 2);
            assert!(!s.negatives().is_empty());
        }
    }

    #[test]
    fn mismatched_answers_error() {
        let (v, answers) = two_blobs();
        let d = hac_average_linkage(&v).unwrap();
        assert!(partition_answers(&d, &answers[..9], 0.2, 5).is_err());
        assert!(partition_answers(&d, &answers, 1.5, 5).is_err());
    }
}
